#pragma once
// Sharpness metrics at a candidate solution, plus the local Hessian
// sensitivity probe. All metrics use the full batch.

#include <algorithm>
#include <cmath>
#include <vector>

#include "sassha/estimators.hpp"
#include "sassha/numkit.hpp"
#include "sassha/objectives.hpp"

namespace sassha {

struct SharpnessOptions {
  double rho = 0.1;
  int n_mc = 100;
  int n_trace = 100;
  int power_max_iters = 200;
  double power_tol = 1e-8;
};

struct SharpnessReport {
  double lambda_max = 0.0;
  double trace = 0.0;
  double dl_grad = 0.0;
  double dl_avg = 0.0;
  double rho = 0.1;
  int n_mc = 1;
  bool power_converged = true;
  bool near_critical = false;
  bool finite = true;
};

struct LambdaMaxResult {
  double value = 0.0;
  bool converged = false;
};

inline LambdaMaxResult lambda_max(const Objective& f, const Vec64& x, int max_iters = 200,
                                  double tol = 1e-8) {
  const Batch full = f.full_batch();
  auto r = power_iteration([&](const Vec64& v) { return f.hvp(x, v, full); }, f.dim(), max_iters,
                           tol);
  return {r.lambda, r.converged};
}

inline TraceEstimate hessian_trace(const Objective& f, const Vec64& x, int n_samples,
                                   RngStream& rng) {
  const Batch full = f.full_batch();
  return hutchinson_trace([&](const Vec64& v) { return f.hvp(x, v, full); }, f.dim(), n_samples,
                          rng);
}

struct DeltaLGrad {
  double value = 0.0;
  bool near_critical = false;
};

/// L(x + ρ∇L/‖∇L‖) − L(x); zero with the near-critical flag when ‖∇L‖ < 1e-12.
inline DeltaLGrad delta_l_grad(const Objective& f, const Vec64& x, double rho) {
  if (!(rho > 0.0)) throw Error("delta_l_grad: rho must be > 0");
  const Batch full = f.full_batch();
  const Vec64 g = f.grad(x, full);
  const double n = norm2(g);
  if (n < 1e-12) return {0.0, true};
  const Vec64 xp = x + (rho / n) * g;
  return {f.value(xp, full) - f.value(x, full), false};
}

/// Monte-Carlo mean of L(x + ρz/‖z‖) − L(x) over Gaussian z.
inline double delta_l_avg(const Objective& f, const Vec64& x, double rho, int n_mc,
                          RngStream& rng) {
  if (n_mc < 1) throw Error("delta_l_avg: n_mc must be >= 1");
  const Batch full = f.full_batch();
  const double base = f.value(x, full);
  double sum = 0.0;
  for (int i = 0; i < n_mc; ++i) {
    const Vec64 u = unit_sphere_direction(rng, f.dim());
    sum += f.value(x + rho * u, full) - base;
  }
  return sum / n_mc;
}

/// max over n_dirs random unit directions δ of ‖Ĥ(x + ρδ) − Ĥ(x)‖₂, with Ĥ
/// the Hutchinson diagonal. Both points reuse the same probes.
inline double hessian_sensitivity(const Objective& f, const Vec64& x, double rho, int n_dirs,
                                  int n_probes, RngStream& rng) {
  if (n_dirs < 1) throw Error("hessian_sensitivity: n_dirs must be >= 1");
  if (n_probes < 1) throw Error("hessian_sensitivity: n_probes must be >= 1");
  const Batch full = f.full_batch();
  std::vector<Vec64> probes;
  for (int i = 0; i < n_probes; ++i) probes.push_back(rademacher(rng, f.dim()));
  const auto base =
      hutchinson_diag_with_probes([&](const Vec64& v) { return f.hvp(x, v, full); }, probes);
  double worst = 0.0;
  for (int k = 0; k < n_dirs; ++k) {
    const Vec64 xp = x + rho * unit_sphere_direction(rng, f.dim());
    const auto moved =
        hutchinson_diag_with_probes([&](const Vec64& v) { return f.hvp(xp, v, full); }, probes);
    const double diff = norm2(moved.values - base.values);
    if (!std::isfinite(diff)) return diff;
    worst = std::max(worst, diff);
  }
  return worst;
}

inline SharpnessReport sharpness_report(const Objective& f, const Vec64& x, RngStream& rng,
                                        const SharpnessOptions& opt = {}) {
  if (!(opt.rho > 0.0)) throw Error("sharpness: rho must be > 0");
  if (opt.n_mc < 1) throw Error("sharpness: n_mc must be >= 1");
  SharpnessReport r;
  r.rho = opt.rho;
  r.n_mc = opt.n_mc;
  const auto lm = lambda_max(f, x, opt.power_max_iters, opt.power_tol);
  r.lambda_max = lm.value;
  r.power_converged = lm.converged;
  RngStream trace_rng = rng.child("trace");
  RngStream mc_rng = rng.child("dl_avg");
  r.trace = hessian_trace(f, x, opt.n_trace, trace_rng).value;
  const auto dg = delta_l_grad(f, x, opt.rho);
  r.dl_grad = dg.value;
  r.near_critical = dg.near_critical;
  r.dl_avg = delta_l_avg(f, x, opt.rho, opt.n_mc, mc_rng);
  r.finite = std::isfinite(r.lambda_max) && std::isfinite(r.trace) && std::isfinite(r.dl_grad) &&
             std::isfinite(r.dl_avg);
  return r;
}

}  // namespace sassha
