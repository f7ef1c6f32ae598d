#include <gtest/gtest.h>

#include <cmath>

#include "sassha/estimators.hpp"
#include "support/oracles.hpp"

using namespace sassha;

namespace {

auto op(const SymMat& h) {
  return [&h](const Vec64& v) { return h.apply(v); };
}

}  // namespace

TEST(HutchinsonDiag, DiagonalMatrixExactForAnySample) {
  const SymMat h = SymMat::diagonal(Vec64{2.0, -3.0});
  RngStream rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    const DiagEstimate e = hutchinson_diag(op(h), 2, 1, rng);
    EXPECT_EQ(e.values, (Vec64{2.0, -3.0}));
    EXPECT_EQ(e.hvp_count, 1);
    EXPECT_EQ(e.n_samples, 1);
    EXPECT_TRUE(e.finite);
  }
}

TEST(HutchinsonDiag, TwoByTwoEnumeration) {
  const SymMat h{{2.0, 1.0}, {1.0, 2.0}};
  const DiagEstimate e = hutchinson_diag_with_probes(op(h), oracle::all_sign_vectors(2));
  EXPECT_EQ(e.values, (Vec64{2.0, 2.0}));
  EXPECT_EQ(e.hvp_count, 4);
}

TEST(HutchinsonDiag, ZeroSamplesRejected) {
  const SymMat h = SymMat::identity(3);
  RngStream rng(2);
  EXPECT_THROW(hutchinson_diag(op(h), 3, 0, rng), Error);
  EXPECT_THROW(hutchinson_trace(op(h), 3, 0, rng), Error);
  EXPECT_THROW(hutchinson_diag_with_probes(op(h), {}), Error);
}

TEST(HutchinsonDiag, NonFiniteOperatorFlagged) {
  RngStream rng(3);
  const auto bad = [](const Vec64& v) {
    Vec64 out = v;
    out[0] = std::nan("");
    return out;
  };
  EXPECT_FALSE(hutchinson_diag(bad, 2, 3, rng).finite);
  EXPECT_FALSE(hutchinson_trace(bad, 2, 3, rng).finite);
}

TEST(HutchinsonDiag, FullEnumerationMatchesGroundTruth) {
  RngStream rng(4);
  for (std::size_t d = 1; d <= 12; ++d) {
    const SymMat h = oracle::random_symmetric(rng, d);
    const auto probes = oracle::all_sign_vectors(d);
    const DiagEstimate e = hutchinson_diag_with_probes(op(h), probes);
    const Vec64 truth = h.diag();
    for (std::size_t i = 0; i < d; ++i) EXPECT_NEAR(e.values[i], truth[i], 1e-12) << "d=" << d;

    double tr = 0.0;
    for (const Vec64& z : probes) tr += dot(z, h.apply(z));
    tr /= static_cast<double>(probes.size());
    EXPECT_NEAR(tr, h.trace(), 1e-12) << "d=" << d;

    // Mean of the diagonal estimate equals tr(H)/d.
    double mean = 0.0;
    for (std::size_t i = 0; i < d; ++i) mean += e.values[i];
    EXPECT_NEAR(mean / static_cast<double>(d), h.trace() / static_cast<double>(d), 1e-12);
  }
}

TEST(HutchinsonDiag, StandardErrorScalesAsInverseRootN) {
  RngStream hr(5);
  const SymMat h = oracle::random_symmetric(hr, 10);
  const int reps = 300;
  std::vector<double> se;
  for (int n : {10, 100, 1000}) {
    RngStream rng = RngStream(6).child(static_cast<std::uint64_t>(n));
    std::vector<double> sum(10, 0.0), sum_sq(10, 0.0);
    for (int r = 0; r < reps; ++r) {
      const DiagEstimate e = hutchinson_diag(op(h), 10, n, rng);
      for (std::size_t i = 0; i < 10; ++i) {
        sum[i] += e.values[i];
        sum_sq[i] += e.values[i] * e.values[i];
      }
    }
    double avg_sd = 0.0;
    for (std::size_t i = 0; i < 10; ++i) {
      const double m = sum[i] / reps;
      avg_sd += std::sqrt((sum_sq[i] - reps * m * m) / (reps - 1));
    }
    se.push_back(avg_sd / 10.0);
  }
  const double expected = std::sqrt(10.0);
  for (std::size_t j = 0; j + 1 < se.size(); ++j) {
    const double ratio = se[j] / se[j + 1];
    EXPECT_GT(ratio, expected / 2.0) << "n step " << j;
    EXPECT_LT(ratio, expected * 2.0) << "n step " << j;
  }
}

TEST(HutchinsonTrace, Examples) {
  RngStream rng(7);
  const SymMat eye = SymMat::identity(3);
  EXPECT_EQ(hutchinson_trace(op(eye), 3, 1, rng).value, 3.0);
  EXPECT_EQ(hutchinson_trace(op(eye), 3, 5, rng).std_error, 0.0);
  const SymMat zero(4);
  EXPECT_EQ(hutchinson_trace(op(zero), 4, 3, rng).value, 0.0);
}

TEST(HutchinsonTrace, UnbiasedWithinStandardError) {
  RngStream hr(8);
  const SymMat h = oracle::random_symmetric(hr, 10);
  RngStream rng(9);
  const TraceEstimate t = hutchinson_trace(op(h), 10, 4000, rng);
  EXPECT_GT(t.std_error, 0.0);
  EXPECT_LE(std::abs(t.value - h.trace()), 4.0 * t.std_error);
}
