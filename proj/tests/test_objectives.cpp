#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "sassha/objectives.hpp"
#include "support/oracles.hpp"

using namespace sassha;

namespace {

std::vector<Vec64> random_points(RngStream& rng, std::size_t d, int n, double scale) {
  std::vector<Vec64> pts;
  for (int i = 0; i < n; ++i) pts.push_back(scale * gaussian(rng, d));
  return pts;
}

Dataset four_point_separable() {
  Dataset ds;
  ds.features = Matrix(4, 2);
  const double f[4][2] = {{1, 1}, {2, 0.5}, {-1, -1}, {-0.5, -2}};
  for (int i = 0; i < 4; ++i) {
    ds.features(i, 0) = f[i][0];
    ds.features(i, 1) = f[i][1];
  }
  ds.labels = {1, 1, 0, 0};
  ds.noise_mask.assign(4, false);
  return ds;
}

}  // namespace

// --- quadratic ---------------------------------------------------------------

TEST(Quadratic, Examples) {
  const QuadraticObjective iso(SymMat::identity(2));
  const Batch b = iso.full_batch();
  EXPECT_DOUBLE_EQ(iso.value(Vec64{1, 1}, b), 1.0);
  EXPECT_EQ(iso.grad(Vec64{1, 1}, b), (Vec64{1, 1}));
  const QuadraticObjective diag(SymMat::diagonal(Vec64{2, 8}));
  EXPECT_EQ(diag.hvp(Vec64{3, 3}, Vec64{0, 1}, b), (Vec64{0, 8}));
  const QuadraticObjective full(SymMat{{2, 1}, {1, 2}});
  EXPECT_DOUBLE_EQ(full.value(Vec64{1, 0}, b), 1.0);
  EXPECT_EQ(full.grad(Vec64{1, 0}, b), (Vec64{2, 1}));
}

TEST(Quadratic, DimensionMismatchRejected) {
  EXPECT_THROW(QuadraticObjective(SymMat::identity(2), Vec64{1, 2, 3}), Error);
  const QuadraticObjective q(SymMat::identity(2));
  EXPECT_THROW(q.value(Vec64{1, 2, 3}, q.full_batch()), Error);
}

TEST(Quadratic, DerivativeOracles) {
  RngStream rng(31);
  const QuadraticObjective q(random_spd(rng, 8, 50.0), gaussian(rng, 8));
  const auto c = oracle::check_derivatives(q, random_points(rng, 8, 20, 2.0), rng);
  EXPECT_LE(c.worst_grad, 1e-5);
  EXPECT_LE(c.worst_hvp, 1e-5);
  EXPECT_LE(c.worst_symmetry, 1e-10);
}

TEST(Quadratic, RandomSpdSpectrum) {
  RngStream rng(32);
  const SymMat h = random_spd(rng, 20, 100.0);
  const auto e = jacobi_eigs(h);
  EXPECT_NEAR(e.values.front(), 100.0, 1e-9);
  EXPECT_NEAR(e.values.back(), 1.0, 1e-9);
}

// --- mixture -------------------------------------------------------------------

TEST(Mixture, SingleComponentStationaryAtMean) {
  const auto g = GaussianMixtureLandscape::single({1.0, {0.5, -1.0}, {0.3, 0.1, 0.6}});
  const Vec64 gr = g.grad(Vec64{0.5, -1.0}, g.full_batch());
  EXPECT_NEAR(norm2(gr), 0.0, 1e-15);
}

TEST(Mixture, StandardNormalValueAtMean) {
  const auto g = GaussianMixtureLandscape::single({1.0, {0.0, 0.0}, {1.0, 0.0, 1.0}});
  EXPECT_NEAR(g.value_full(Vec64{0.0, 0.0}), -1.0 / (2.0 * std::numbers::pi), 1e-15);
}

TEST(Mixture, CanonicalCurvatureContrast) {
  const GaussianMixtureLandscape f(canonical_mixture());
  const double sharp = f.hessian(Vec64{2, 0}).trace();
  const double flat = f.hessian(Vec64{-2, 0}).trace();
  EXPECT_GT(flat, 0.0);
  EXPECT_GE(sharp, 10.0 * flat);
  EXPECT_EQ(f.nearest_component(Vec64{1.5, 3.0}), 0u);
  EXPECT_EQ(f.nearest_component(Vec64{-0.1, -3.0}), 1u);
}

TEST(Mixture, TraceAtMeansMatchesClosedForm) {
  const auto spec = canonical_mixture();
  const GaussianMixtureLandscape f(spec);
  for (const auto& c : spec.components) {
    const Vec64 mu{c.mean[0], c.mean[1]};
    EXPECT_NEAR(f.hessian(mu).trace(), oracle::mixture_hessian(spec, mu).trace(), 1e-8);
  }
  // a rotated, correlated spec as well
  MixtureSpec other{{{0.4, {1.0, 1.0}, {0.5, 0.2, 0.3}}, {0.9, {-1.0, 0.5}, {2.0, -0.4, 1.0}}}};
  const GaussianMixtureLandscape g(other);
  for (const auto& c : other.components) {
    const Vec64 mu{c.mean[0], c.mean[1]};
    EXPECT_NEAR(g.hessian(mu).trace(), oracle::mixture_hessian(other, mu).trace(), 1e-8);
  }
}

TEST(Mixture, HessianMatchesIndependentFormulaEverywhere) {
  const auto spec = canonical_mixture();
  const GaussianMixtureLandscape f(spec);
  RngStream rng(33);
  for (int i = 0; i < 50; ++i) {
    const Vec64 x{8.0 * rng.uniform() - 4.0, 6.0 * rng.uniform() - 3.0};
    const SymMat a = f.hessian(x), b = oracle::mixture_hessian(spec, x);
    for (int r = 0; r < 2; ++r)
      for (int c = 0; c < 2; ++c) EXPECT_NEAR(a(r, c), b(r, c), 1e-12 * std::max(1.0, std::abs(b(r, c))));
    EXPECT_LE(norm2(f.hvp(x, Vec64{0.3, -0.7}, f.full_batch()) - b.apply(Vec64{0.3, -0.7})), 1e-12);
  }
}

TEST(Mixture, DerivativeOracles) {
  const GaussianMixtureLandscape f(canonical_mixture());
  RngStream rng(34);
  std::vector<Vec64> pts;
  for (int i = 0; i < 10; ++i) pts.push_back(Vec64{2.0 + 0.3 * rng.normal(), 0.3 * rng.normal()});
  for (int i = 0; i < 10; ++i) pts.push_back(Vec64{-2.0 + rng.normal(), rng.normal()});
  const auto c = oracle::check_derivatives(f, pts, rng);
  EXPECT_LE(c.worst_grad, 1e-5);
  EXPECT_LE(c.worst_hvp, 1e-5);
  EXPECT_LE(c.worst_symmetry, 1e-10);
}

TEST(Mixture, RejectsInvalidSpecs) {
  EXPECT_THROW(GaussianMixtureLandscape(MixtureSpec{{{1.0, {0, 0}, {1, 0, 1}}}}), Error);
  EXPECT_THROW(GaussianMixtureLandscape(MixtureSpec{{{1.0, {0, 0}, {1, 1, 1}}, {1.0, {1, 0}, {1, 0, 1}}}}),
               Error);
  EXPECT_THROW(GaussianMixtureLandscape(MixtureSpec{{{1.0, {0, 0}, {1, 0, 1}}, {-1.0, {1, 0}, {1, 0, 1}}}}),
               Error);
}

// --- logistic ------------------------------------------------------------------

TEST(Logistic, ZeroWeightsGiveLn2) {
  RngStream rng(35);
  const LogisticRegression f(make_logistic_teacher(rng, 50, 5, 2.0), 0.0);
  EXPECT_NEAR(f.value_full(Vec64(5)), std::log(2.0), 1e-15);
}

TEST(Logistic, L2FloorOnCurvature) {
  RngStream rng(36);
  const double l2 = 0.3;
  const LogisticRegression f(make_logistic_teacher(rng, 100, 6, 2.0), l2);
  for (int i = 0; i < 20; ++i) {
    const Vec64 x = 3.0 * gaussian(rng, 6), v = gaussian(rng, 6);
    EXPECT_GE(dot(v, f.hvp(x, v, f.full_batch())), l2 * dot(v, v) * (1.0 - 1e-12));
  }
}

TEST(Logistic, SeparableGradientAtOriginMatchesFiniteDifferences) {
  const LogisticRegression f(four_point_separable(), 0.0);
  const Batch b = f.full_batch();
  const Vec64 g = f.grad(Vec64(2), b);
  EXPECT_NEAR(norm2(g), norm2(oracle::fd_grad(f, Vec64(2), b)), 1e-6);
}

TEST(Logistic, RejectsNonBinaryLabels) {
  Dataset ds = four_point_separable();
  ds.labels[0] = 2;
  ds.num_classes = 3;
  EXPECT_THROW(LogisticRegression(ds, 0.0), Error);
}

TEST(Logistic, DerivativeOracles) {
  RngStream rng(37);
  const LogisticRegression f(make_logistic_teacher(rng, 200, 10, 2.0), 0.01);
  const auto c = oracle::check_derivatives(f, random_points(rng, 10, 20, 1.0), rng);
  EXPECT_LE(c.worst_grad, 1e-5);
  EXPECT_LE(c.worst_hvp, 1e-5);
  EXPECT_LE(c.worst_symmetry, 1e-10);
}

TEST(Logistic, StableForLargeMargins) {
  const LogisticRegression f(four_point_separable(), 0.0);
  const Vec64 x{800.0, 800.0};
  EXPECT_TRUE(std::isfinite(f.value_full(x)));
  EXPECT_TRUE(all_finite(f.grad(x, f.full_batch())));
  EXPECT_NEAR(f.value_full(-1.0 * x), 0.25 * (1600 + 2000 + 1600 + 2000), 1e-9);
}

// --- MLP -----------------------------------------------------------------------

TEST(Mlp, DimensionFormula) {
  RngStream rng(38);
  const Dataset ds = make_blobs(rng, 30, 6, 3, 2.0, 1.0);
  const MlpObjective f(ds, 7, Activation::kTanh, Loss::kCrossEntropy);
  EXPECT_EQ(f.dim(), 6u * 7 + 7 + 7 * 3 + 3);
}

TEST(Mlp, ZeroNetworkZeroTargetsMseIsZero) {
  RngStream rng(39);
  Dataset ds = make_blobs(rng, 20, 4, 2, 2.0, 1.0);
  ds.targets = Matrix(20, 2);
  const MlpObjective f(ds, 5, Activation::kTanh, Loss::kMse);
  EXPECT_EQ(f.value_full(Vec64(f.dim())), 0.0);
}

TEST(Mlp, RejectsOversizedNetworks) {
  RngStream rng(40);
  const Dataset ds = make_blobs(rng, 10, 100, 2, 2.0, 1.0);
  EXPECT_THROW(MlpObjective(ds, 60, Activation::kTanh, Loss::kCrossEntropy), Error);
  EXPECT_THROW(MlpObjective(ds, 0, Activation::kTanh, Loss::kCrossEntropy), Error);
}

TEST(Mlp, DerivativeOraclesTanhCrossEntropy) {
  RngStream rng(41);
  const MlpObjective f(make_blobs(rng, 40, 6, 2, 2.0, 1.0), 24, Activation::kTanh, Loss::kCrossEntropy);
  EXPECT_GE(f.dim(), 200u);
  std::vector<Vec64> pts;
  for (int i = 0; i < 20; ++i) pts.push_back(f.initial_point(rng) + 0.1 * gaussian(rng, f.dim()));
  const auto c = oracle::check_derivatives(f, pts, rng);
  EXPECT_LE(c.worst_grad, 1e-5);
  EXPECT_LE(c.worst_hvp, 1e-5);
  EXPECT_LE(c.worst_symmetry, 1e-10);
}

TEST(Mlp, DerivativeOraclesReluMse) {
  RngStream rng(42);
  const MlpObjective f(make_blobs(rng, 30, 4, 3, 2.0, 1.0), 8, Activation::kRelu, Loss::kMse);
  std::vector<Vec64> pts;
  for (int i = 0; i < 20; ++i) pts.push_back(f.initial_point(rng) + 0.1 * gaussian(rng, f.dim()));
  const auto c = oracle::check_derivatives(f, pts, rng);
  EXPECT_LE(c.worst_grad, 1e-5);
  EXPECT_LE(c.worst_hvp, 1e-5);
  EXPECT_LE(c.worst_symmetry, 1e-10);
}

TEST(Mlp, ForwardMatchesTapeOnCrossEntropy) {
  RngStream rng(43);
  const Dataset ds = make_blobs(rng, 10, 3, 3, 2.0, 1.0);
  const MlpObjective f(ds, 4, Activation::kTanh, Loss::kCrossEntropy);
  const Vec64 x = f.initial_point(rng);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto out = f.forward(x, ds.features.row(i));
    double lse = 0.0;
    for (double o : out) lse += std::exp(o);
    const double ref = std::log(lse) - out[static_cast<std::size_t>(ds.labels[i])];
    EXPECT_NEAR(f.value(x, Batch({i}, ds.size())), ref, 1e-12);
  }
}

TEST(Objective, FullBatchIsMeanOfExamplesAndRepeatable) {
  RngStream rng(44);
  const MlpObjective f(make_blobs(rng, 12, 3, 2, 2.0, 1.0), 4, Activation::kTanh, Loss::kCrossEntropy);
  const Vec64 x = f.initial_point(rng);
  double s = 0.0;
  for (std::size_t i = 0; i < 12; ++i) s += f.value(x, Batch({i}, 12));
  EXPECT_NEAR(f.value_full(x), s / 12.0, 1e-14);
  const Batch b({1, 5, 7}, 12);
  EXPECT_EQ(f.grad(x, b), f.grad(x, b));
  EXPECT_EQ(f.hvp(x, x, b), f.hvp(x, x, b));
}

// --- data ----------------------------------------------------------------------

TEST(Csv, DirectParse) {
  std::istringstream in("1.0,2.0,0\n3.0,4.0,1");
  const Dataset ds = parse_csv(in);
  EXPECT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.num_features(), 2u);
  EXPECT_EQ(ds.labels, (std::vector<int>{0, 1}));
  EXPECT_EQ(ds.features(1, 0), 3.0);
}

TEST(Csv, HeaderSkipped) {
  std::istringstream in("a,b,label\n1.0,2.0,0\n3.0,4.0,1\n");
  EXPECT_EQ(parse_csv(in).size(), 2u);
}

TEST(Csv, RaggedRowNamesLine) {
  std::istringstream in("1.0,2.0,0\n3.0,1\n");
  try {
    parse_csv(in, "data.csv");
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(Csv, NonNumericAndEmptyRejected) {
  std::istringstream bad("1.0,2.0,0\n1.0,x,1\n");
  EXPECT_THROW(parse_csv(bad), Error);
  std::istringstream empty("");
  EXPECT_THROW(parse_csv(empty), Error);
  EXPECT_THROW(load_csv("/nonexistent/file.csv"), Error);
}

TEST(Csv, LoadFromFile) {
  const auto p = std::filesystem::temp_directory_path() / "sassha_csv_test.csv";
  {
    std::ofstream out(p);
    out << "x1,x2,y\n0.5,0.25,1\n-1,2,0\n";
  }
  const Dataset ds = load_csv(p.string());
  EXPECT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.labels[0], 1);
  std::filesystem::remove(p);
}

TEST(LabelNoise, ZeroFractionIsIdentity) {
  RngStream rng(45), r2(46);
  const Dataset ds = make_blobs(rng, 30, 2, 3, 2.0, 1.0);
  const Dataset out = inject_label_noise(ds, 0.0, r2);
  EXPECT_EQ(out.labels, ds.labels);
  for (bool m : out.noise_mask) EXPECT_FALSE(m);
}

TEST(LabelNoise, FullFractionBinaryFlipsAll) {
  RngStream rng(47), r2(48);
  const Dataset ds = make_blobs(rng, 25, 2, 2, 2.0, 1.0);
  const Dataset out = inject_label_noise(ds, 1.0, r2);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(out.labels[i], 1 - ds.labels[i]);
    EXPECT_TRUE(out.noise_mask[i]);
  }
}

TEST(LabelNoise, ExactCountAndChangedLabels) {
  RngStream rng(49);
  const Dataset ds = make_blobs(rng, 10, 2, 4, 2.0, 1.0);
  RngStream a(50), b(50);
  const Dataset out = inject_label_noise(ds, 0.4, a);
  std::size_t masked = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (out.noise_mask[i]) {
      ++masked;
      EXPECT_NE(out.labels[i], ds.labels[i]);
    } else {
      EXPECT_EQ(out.labels[i], ds.labels[i]);
    }
  }
  EXPECT_EQ(masked, 4u);
  EXPECT_EQ(inject_label_noise(ds, 0.4, b).labels, out.labels);
  RngStream c(51);
  EXPECT_THROW(inject_label_noise(ds, 1.5, c), Error);
}

TEST(Minibatch, FullSizeCoversEverything) {
  MinibatchSampler s(RngStream(52), 7, 7);
  const Batch b = s.next();
  std::set<std::size_t> got(b.begin(), b.end());
  EXPECT_EQ(got.size(), 7u);
}

TEST(Minibatch, DeterministicAcrossEpochs) {
  MinibatchSampler a(RngStream(53), 23, 5), b(RngStream(53), 23, 5);
  for (int i = 0; i < 2 * 5; ++i) {
    const Batch x = a.next(), y = b.next();
    EXPECT_EQ(std::vector<std::size_t>(x.begin(), x.end()), std::vector<std::size_t>(y.begin(), y.end()));
  }
}

TEST(Minibatch, EpochPartitionsIndices) {
  const auto batches = minibatch_epoch(RngStream(54), 23, 5);
  EXPECT_EQ(batches.size(), 5u);
  std::multiset<std::size_t> all;
  for (const auto& b : batches) all.insert(b.begin(), b.end());
  EXPECT_EQ(all.size(), 23u);
  for (std::size_t i = 0; i < 23; ++i) EXPECT_EQ(all.count(i), 1u);
}

TEST(Minibatch, RejectsInvalidSizes) {
  EXPECT_THROW(MinibatchSampler(RngStream(1), 5, 6), Error);
  EXPECT_THROW(MinibatchSampler(RngStream(1), 5, 0), Error);
  EXPECT_THROW(Batch({1, 1}, 3), Error);
  EXPECT_THROW(Batch({3}, 3), Error);
}
