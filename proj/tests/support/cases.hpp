#pragma once
// Random problem instances shared by unit and acceptance tests.

#include "sassha/stability.hpp"

namespace cases {

using sassha::Ensemble;
using sassha::RngStream;

struct StabilityCase {
  Ensemble ensemble;
  double eta, rho, eps;
  double lambda_max_M;
};

/// Commuting ensemble (four members, relative spread `spread`) with (η, ρ, ε) drawn until
/// λ_max(M) lands in [lo, hi]. The deterministic factor c·a(1 + ρa) is
/// drawn from `step_range` to steer toward the target band.
inline StabilityCase draw_stability_case(RngStream& rng, double lo, double hi, double step_lo,
                                         double step_hi, double spread = 0.5, std::size_t d = 6) {
  for (;;) {
    Ensemble e = sassha::random_commuting_ensemble(rng, d, 4, 0.2, 5.0, spread);
    const double a = sassha::lambda_max(sassha::moments(e).m1);
    const double eps = 0.1 + 0.9 * rng.uniform();
    const double rho = 0.2 * rng.uniform();
    const double target = step_lo + (step_hi - step_lo) * rng.uniform();
    const double eta = eps * target / (a * (1.0 + rho * a));
    const double lm = sassha::stability_matrix(e, eta, rho, eps).lambda_max;
    if (lm >= lo && lm <= hi) return {std::move(e), eta, rho, eps, lm};
  }
}

}  // namespace cases
