#pragma once
// Hutchinson estimators for the Hessian diagonal and trace.

#include <cmath>
#include <vector>

#include "sassha/numkit.hpp"

namespace sassha {

struct DiagEstimate {
  Vec64 values;
  int n_samples = 0;
  int hvp_count = 0;
  bool finite = true;
};

/// (1/n) Σ_j z_j ⊙ (H z_j) over Rademacher probes z_j.
template <class Apply>
DiagEstimate hutchinson_diag(Apply&& apply, std::size_t d, int n_samples, RngStream& rng) {
  if (n_samples < 1) throw Error("hutchinson_diag: n_samples must be >= 1");
  DiagEstimate est{Vec64(d), n_samples, 0, true};
  for (int s = 0; s < n_samples; ++s) {
    const Vec64 z = rademacher(rng, d);
    const Vec64 hz = apply(z);
    ++est.hvp_count;
    if (hz.size() != d) throw Error("hutchinson_diag: operator returned wrong dimension");
    for (std::size_t i = 0; i < d; ++i) est.values[i] += z[i] * hz[i];
  }
  est.values *= 1.0 / n_samples;
  est.finite = all_finite(est.values);
  return est;
}

/// Same estimator with caller-supplied probes, for common-random-number
/// comparisons and exhaustive enumeration.
template <class Apply>
DiagEstimate hutchinson_diag_with_probes(Apply&& apply, const std::vector<Vec64>& probes) {
  if (probes.empty()) throw Error("hutchinson_diag: need at least one probe");
  const std::size_t d = probes.front().size();
  DiagEstimate est{Vec64(d), static_cast<int>(probes.size()), 0, true};
  for (const Vec64& z : probes) {
    const Vec64 hz = apply(z);
    ++est.hvp_count;
    for (std::size_t i = 0; i < d; ++i) est.values[i] += z[i] * hz[i];
  }
  est.values *= 1.0 / static_cast<double>(probes.size());
  est.finite = all_finite(est.values);
  return est;
}

struct TraceEstimate {
  double value = 0.0;
  int n_samples = 0;
  bool finite = true;
  /// Sample standard error of the mean (0 when n_samples == 1).
  double std_error = 0.0;
};

/// (1/n) Σ_j z_jᵀ(H z_j) over Rademacher probes.
template <class Apply>
TraceEstimate hutchinson_trace(Apply&& apply, std::size_t d, int n_samples, RngStream& rng) {
  if (n_samples < 1) throw Error("hutchinson_trace: n_samples must be >= 1");
  double sum = 0.0, sum_sq = 0.0;
  for (int s = 0; s < n_samples; ++s) {
    const Vec64 z = rademacher(rng, d);
    const double q = dot(z, apply(z));
    sum += q;
    sum_sq += q * q;
  }
  TraceEstimate t;
  t.n_samples = n_samples;
  t.value = sum / n_samples;
  if (n_samples > 1) {
    const double var = std::max(0.0, (sum_sq - n_samples * t.value * t.value) / (n_samples - 1));
    t.std_error = std::sqrt(var / n_samples);
  }
  t.finite = std::isfinite(t.value);
  return t;
}

}  // namespace sassha
