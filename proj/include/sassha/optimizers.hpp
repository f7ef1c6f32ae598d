#pragma once
// Update rules: SASSHA, M-SASSHA, SAM over SGD-momentum or AdamW,
// AdaHessian, Sophia-H, AdamW and SGD-momentum, with step-size/radius
// schedules and exact gradient (GC) / Hessian-vector-product (HVP)
// accounting.

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sassha/estimators.hpp"
#include "sassha/numkit.hpp"
#include "sassha/objectives.hpp"

namespace sassha {

/// Raised when a parameter, preconditioner entry, gradient or loss becomes
/// non-finite. Carries the step index and the offending quantity.
class DivergenceError : public Error {
 public:
  DivergenceError(long step, std::string quantity)
      : Error("diverged at step " + std::to_string(step) + ": non-finite " + quantity),
        step_(step),
        quantity_(std::move(quantity)) {}
  long step() const noexcept { return step_; }
  const std::string& quantity() const noexcept { return quantity_; }

 private:
  long step_;
  std::string quantity_;
};

// ---------------------------------------------------------------------------
// Schedules
// ---------------------------------------------------------------------------

enum class ScheduleKind { kConstant, kMultistep, kCosineWarmup, kPolynomial, kPowerDecay };

struct Schedule {
  ScheduleKind kind = ScheduleKind::kConstant;
  double base = 0.0;
  std::vector<double> milestones;  // multistep
  double gamma = 0.1;              // multistep decay factor
  long warmup = 0;                 // cosine_warmup ramp length
  double power = 1.0;              // polynomial exponent, or p in base·t^(−p)

  static Schedule constant(double v) { return {ScheduleKind::kConstant, v, {}, 0.1, 0, 1.0}; }
  static Schedule multistep(double v, std::vector<double> milestones, double gamma) {
    return {ScheduleKind::kMultistep, v, std::move(milestones), gamma, 0, 1.0};
  }
  static Schedule cosine_warmup(double v, long warmup) {
    return {ScheduleKind::kCosineWarmup, v, {}, 0.1, warmup, 1.0};
  }
  static Schedule polynomial(double v, double power) {
    return {ScheduleKind::kPolynomial, v, {}, 0.1, 0, power};
  }
  static Schedule power_decay(double v, double p) {
    return {ScheduleKind::kPowerDecay, v, {}, 0.1, 0, p};
  }

  void validate(std::string_view what) const {
    auto fail = [&](const std::string& m) { throw Error(std::string(what) + " schedule: " + m); };
    if (!std::isfinite(base) || base < 0.0) fail("base value must be finite and >= 0");
    switch (kind) {
      case ScheduleKind::kConstant: break;
      case ScheduleKind::kMultistep:
        if (!(gamma > 0.0)) fail("gamma must be > 0");
        for (std::size_t i = 1; i < milestones.size(); ++i)
          if (milestones[i] < milestones[i - 1]) fail("milestones must be non-decreasing");
        break;
      case ScheduleKind::kCosineWarmup:
        if (warmup < 0) fail("warmup must be >= 0");
        break;
      case ScheduleKind::kPolynomial:
      case ScheduleKind::kPowerDecay:
        if (!(power >= 0.0)) fail("exponent must be >= 0");
        break;
    }
  }
};

inline std::string_view to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::kConstant: return "constant";
    case ScheduleKind::kMultistep: return "multistep";
    case ScheduleKind::kCosineWarmup: return "cosine_warmup";
    case ScheduleKind::kPolynomial: return "polynomial";
    case ScheduleKind::kPowerDecay: return "power_decay";
  }
  return "?";
}

inline std::optional<ScheduleKind> parse_schedule_kind(std::string_view s) {
  for (auto k : {ScheduleKind::kConstant, ScheduleKind::kMultistep, ScheduleKind::kCosineWarmup,
                 ScheduleKind::kPolynomial, ScheduleKind::kPowerDecay})
    if (to_string(k) == s) return k;
  return std::nullopt;
}

/// Value at step t (1-based). Multistep milestones are in the same unit as t.
inline double schedule_value(const Schedule& s, long t, long total_steps) {
  if (t < 1) throw Error("schedule_value: t must be >= 1");
  const double td = static_cast<double>(t);
  switch (s.kind) {
    case ScheduleKind::kConstant: return s.base;
    case ScheduleKind::kMultistep: {
      double v = s.base;
      for (double m : s.milestones)
        if (m <= td) v *= s.gamma;
      return v;
    }
    case ScheduleKind::kCosineWarmup: {
      if (t <= s.warmup) return s.base * td / static_cast<double>(s.warmup);
      const long span = std::max(1L, total_steps - s.warmup);
      const double frac = std::min(1.0, static_cast<double>(t - s.warmup) / static_cast<double>(span));
      return 0.5 * s.base * (1.0 + std::cos(std::numbers::pi * frac));
    }
    case ScheduleKind::kPolynomial: {
      const double frac = std::min(1.0, td / static_cast<double>(std::max(1L, total_steps)));
      return s.base * std::pow(1.0 - frac, s.power);
    }
    case ScheduleKind::kPowerDecay: return s.base * std::pow(td, -s.power);
  }
  return s.base;
}

struct ScheduleCheck {
  bool ok = false;
  std::string diagnostic;
};

/// For η_t ∝ t^(−p), ρ_t ∝ t^(−q): Ση = ∞ needs p ≤ 1, Ση² < ∞ needs p > ½,
/// Σρ²η < ∞ needs p + 2q > 1.
inline ScheduleCheck check_theorem_schedule(double p, double q) {
  if (p < 0.0 || q < 0.0) return {false, "exponents must be non-negative"};
  std::string diag;
  bool ok = true;
  if (p > 1.0) {
    ok = false;
    diag += "sum of eta_t converges (p > 1); ";
  }
  if (2.0 * p <= 1.0) {
    ok = false;
    diag += "sum of eta_t^2 diverges (2p <= 1); ";
  }
  if (p + 2.0 * q <= 1.0) {
    ok = false;
    diag += "sum of rho_t^2 eta_t diverges (p + 2q <= 1); ";
  }
  if (ok) diag = "all three series conditions hold";
  else diag.resize(diag.size() - 2);
  return {ok, diag};
}

// ---------------------------------------------------------------------------
// Configuration and state
// ---------------------------------------------------------------------------

enum class Method { kSassha, kMSassha, kSamSgdm, kSamAdamw, kAdaHessian, kSophiaH, kAdamW, kSgdm };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::kSassha: return "sassha";
    case Method::kMSassha: return "msassha";
    case Method::kSamSgdm: return "sam_sgdm";
    case Method::kSamAdamw: return "sam_adamw";
    case Method::kAdaHessian: return "adahessian";
    case Method::kSophiaH: return "sophiah";
    case Method::kAdamW: return "adamw";
    case Method::kSgdm: return "sgdm";
  }
  return "?";
}

inline std::optional<Method> parse_method(std::string_view s) {
  for (auto m : {Method::kSassha, Method::kMSassha, Method::kSamSgdm, Method::kSamAdamw,
                 Method::kAdaHessian, Method::kSophiaH, Method::kAdamW, Method::kSgdm})
    if (to_string(m) == s) return m;
  return std::nullopt;
}

inline bool uses_radius(Method m) {
  return m == Method::kSassha || m == Method::kMSassha || m == Method::kSamSgdm ||
         m == Method::kSamAdamw;
}
inline bool uses_hessian(Method m) {
  return m == Method::kSassha || m == Method::kMSassha || m == Method::kAdaHessian ||
         m == Method::kSophiaH;
}

struct OptimizerConfig {
  Method method = Method::kSassha;
  Schedule lr = Schedule::constant(0.1);
  Schedule rho = Schedule::constant(0.0);
  double beta1 = 0.9;
  double beta2 = 0.999;
  int k = 10;                 // Hessian refresh interval
  double weight_decay = 0.0;  // decoupled
  double eps = 1e-8;
  int n_hutch = 1;
  double clip = 0.01;         // Sophia-H clip threshold
  double hess_floor = 1e-2;   // Sophia-H Hessian floor
  double momentum = 0.9;      // SGD heavy-ball coefficient
  long total_steps = 1;       // horizon for cosine/polynomial schedules

  /// Programmatic check. ε = 0 is accepted here so exact hand-computed
  /// steps can be expressed; config files require ε > 0.
  void validate() const {
    auto fail = [](const std::string& m) { throw Error("optimizer config: " + m); };
    if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("beta1 must lie in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("beta2 must lie in [0, 1)");
    if (k < 1) fail("k must be >= 1");
    if (!(eps >= 0.0)) fail("eps must be >= 0");
    if (n_hutch < 1) fail("n_hutch must be >= 1");
    if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must lie in [0, 1)");
    if (method == Method::kSophiaH) {
      if (!(clip > 0.0)) fail("Sophia-H clip threshold must be > 0");
      if (!(hess_floor > 0.0)) fail("Sophia-H Hessian floor must be > 0");
    }
    if (total_steps < 1) fail("total_steps must be >= 1");
    lr.validate("lr");
    rho.validate("rho");
  }
};

/// m: gradient EMA (heavy-ball buffer for SGD); d: Hessian or squared-
/// gradient EMA; d_bar: the divisor applied to the momentum (frozen
/// between refreshes for lazy methods).
struct OptState {
  Vec64 x;
  Vec64 m;
  Vec64 d;
  Vec64 d_bar;
  long t = 1;
  long t_hess = 0;
  long gc_count = 0;
  long hvp_count = 0;

  static OptState init(Vec64 x0) {
    OptState s;
    const std::size_t n = x0.size();
    s.x = std::move(x0);
    s.m = Vec64(n);
    s.d = Vec64(n);
    s.d_bar = Vec64(n);
    return s;
  }
};

inline bool is_refresh_step(long t, int k) { return k == 1 || t % k == 1; }

// ---------------------------------------------------------------------------
// Building blocks
// ---------------------------------------------------------------------------

/// ε* = ρ·g/‖g‖₂; zero when ‖g‖₂ < 1e-16.
inline Vec64 perturbation(const Vec64& g, double rho) {
  if (rho < 0.0) throw Error("perturbation: rho must be >= 0");
  if (!all_finite(g)) throw DivergenceError(-1, "gradient");
  const double n = norm2(g);
  if (n < 1e-16) return Vec64(g.size());
  return (rho / n) * g;
}

enum class FirstOrderKind { kSgdm, kAdamw };

namespace detail {

inline void require_finite(const Vec64& v, long step, const char* what) {
  if (!all_finite(v)) throw DivergenceError(step, what);
}

inline void check_state(const OptState& s, const Objective& f) {
  if (s.t < 1) throw Error("optimizer step: state.t must be >= 1");
  if (s.x.size() != f.dim() || s.m.size() != f.dim() || s.d.size() != f.dim() ||
      s.d_bar.size() != f.dim())
    throw Error("optimizer step: state dimension does not match objective");
}

inline Vec64 diag_hessian(const Objective& f, const Vec64& at, const Batch& batch, int n_hutch,
                          RngStream& rng, long step) {
  auto est = hutchinson_diag([&](const Vec64& v) { return f.hvp(at, v, batch); }, f.dim(), n_hutch,
                             rng);
  if (!est.finite) throw DivergenceError(step, "Hessian estimate");
  return std::move(est.values);
}

/// x ← x − η·direction − η·λ·x, then finiteness check.
inline void apply_update(OptState& s, const Vec64& direction, double lr, double wd) {
  for (std::size_t i = 0; i < s.x.size(); ++i) s.x[i] = s.x[i] - lr * direction[i] - lr * wd * s.x[i];
  require_finite(s.x, s.t, "parameters");
}

inline double lr_at(const OptimizerConfig& c, const OptState& s) {
  return schedule_value(c.lr, s.t, c.total_steps);
}
inline double rho_at(const OptimizerConfig& c, const OptState& s) {
  return schedule_value(c.rho, s.t, c.total_steps);
}

/// Shared tail of SASSHA and M-SASSHA once the perturbed gradient is known.
inline void sassha_tail(OptState& s, const Objective& f, const Batch& batch, RngStream& rng,
                        const OptimizerConfig& c, const Vec64& x_pert, const Vec64& g_pert) {
  const std::size_t n = s.x.size();
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(s.t));
  Vec64 m_bar(n);
  for (std::size_t i = 0; i < n; ++i) {
    s.m[i] = c.beta1 * s.m[i] + (1.0 - c.beta1) * g_pert[i];
    m_bar[i] = s.m[i] / bc1;
  }
  if (is_refresh_step(s.t, c.k)) {
    const Vec64 h = diag_hessian(f, x_pert, batch, c.n_hutch, rng, s.t);
    s.hvp_count += c.n_hutch;
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(s.t));
    for (std::size_t i = 0; i < n; ++i) {
      s.d[i] = c.beta2 * s.d[i] + (1.0 - c.beta2) * std::abs(h[i]);
      s.d_bar[i] = std::sqrt(s.d[i] / bc2);
    }
    s.t_hess = s.t;
    require_finite(s.d_bar, s.t, "preconditioner");
  }
  Vec64 dir(n);
  for (std::size_t i = 0; i < n; ++i) dir[i] = m_bar[i] / (s.d_bar[i] + c.eps);
  apply_update(s, dir, lr_at(c, s), c.weight_decay);
}

/// Base update of SGD-momentum or AdamW from an already computed gradient.
inline void first_order_update(FirstOrderKind kind, OptState& s, const Vec64& g,
                               const OptimizerConfig& c) {
  const std::size_t n = s.x.size();
  Vec64 dir(n);
  if (kind == FirstOrderKind::kSgdm) {
    for (std::size_t i = 0; i < n; ++i) {
      s.m[i] = c.momentum * s.m[i] + g[i];
      dir[i] = s.m[i];
    }
  } else {
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(s.t));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(s.t));
    for (std::size_t i = 0; i < n; ++i) {
      s.m[i] = c.beta1 * s.m[i] + (1.0 - c.beta1) * g[i];
      s.d[i] = c.beta2 * s.d[i] + (1.0 - c.beta2) * g[i] * g[i];
      s.d_bar[i] = std::sqrt(s.d[i] / bc2);
      dir[i] = (s.m[i] / bc1) / (s.d_bar[i] + c.eps);
    }
  }
  apply_update(s, dir, lr_at(c, s), c.weight_decay);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Steps. Every step evaluates gradients and HVPs on the single batch it is
// given, advances state.t by one, and throws DivergenceError on non-finite
// quantities.
// ---------------------------------------------------------------------------

inline void sassha_step(OptState& s, const Objective& f, const Batch& batch, RngStream& rng,
                        const OptimizerConfig& c) {
  detail::check_state(s, f);
  const Vec64 g = f.grad(s.x, batch);
  detail::require_finite(g, s.t, "gradient");
  const Vec64 x_pert = s.x + perturbation(g, detail::rho_at(c, s));
  const Vec64 g_pert = f.grad(x_pert, batch);
  s.gc_count += 2;
  detail::require_finite(g_pert, s.t, "perturbed gradient");
  detail::sassha_tail(s, f, batch, rng, c, x_pert, g_pert);
  ++s.t;
}

/// Perturbs along the previous momentum, ε* = ρ·m_{t−1}/‖m_{t−1}‖₂, so only
/// the perturbed gradient is computed.
inline void msassha_step(OptState& s, const Objective& f, const Batch& batch, RngStream& rng,
                         const OptimizerConfig& c) {
  detail::check_state(s, f);
  const Vec64 x_pert = s.x + perturbation(s.m, detail::rho_at(c, s));
  const Vec64 g_pert = f.grad(x_pert, batch);
  s.gc_count += 1;
  detail::require_finite(g_pert, s.t, "perturbed gradient");
  detail::sassha_tail(s, f, batch, rng, c, x_pert, g_pert);
  ++s.t;
}

inline void first_order_step(FirstOrderKind kind, OptState& s, const Objective& f,
                             const Batch& batch, const OptimizerConfig& c) {
  detail::check_state(s, f);
  const Vec64 g = f.grad(s.x, batch);
  s.gc_count += 1;
  detail::require_finite(g, s.t, "gradient");
  detail::first_order_update(kind, s, g, c);
  ++s.t;
}

inline void sam_step(FirstOrderKind base, OptState& s, const Objective& f, const Batch& batch,
                     const OptimizerConfig& c) {
  detail::check_state(s, f);
  const Vec64 g = f.grad(s.x, batch);
  detail::require_finite(g, s.t, "gradient");
  const Vec64 x_pert = s.x + perturbation(g, detail::rho_at(c, s));
  const Vec64 g_pert = f.grad(x_pert, batch);
  s.gc_count += 2;
  detail::require_finite(g_pert, s.t, "perturbed gradient");
  detail::first_order_update(base, s, g_pert, c);
  ++s.t;
}

/// Preconditioner √(EMA of Ĥ²), refreshed every step, no spatial averaging.
inline void adahessian_step(OptState& s, const Objective& f, const Batch& batch, RngStream& rng,
                            const OptimizerConfig& c) {
  detail::check_state(s, f);
  const std::size_t n = s.x.size();
  const Vec64 g = f.grad(s.x, batch);
  s.gc_count += 1;
  detail::require_finite(g, s.t, "gradient");
  const Vec64 h = detail::diag_hessian(f, s.x, batch, c.n_hutch, rng, s.t);
  s.hvp_count += c.n_hutch;
  s.t_hess = s.t;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(s.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(s.t));
  Vec64 dir(n);
  for (std::size_t i = 0; i < n; ++i) {
    s.m[i] = c.beta1 * s.m[i] + (1.0 - c.beta1) * g[i];
    s.d[i] = c.beta2 * s.d[i] + (1.0 - c.beta2) * h[i] * h[i];
    s.d_bar[i] = std::sqrt(s.d[i] / bc2);
    dir[i] = (s.m[i] / bc1) / (s.d_bar[i] + c.eps);
  }
  detail::require_finite(s.d_bar, s.t, "preconditioner");
  detail::apply_update(s, dir, detail::lr_at(c, s), c.weight_decay);
  ++s.t;
}

/// Sophia-H: EMA of max(Ĥ, floor) refreshed every k steps, clipped
/// preconditioned momentum.
inline void sophiah_step(OptState& s, const Objective& f, const Batch& batch, RngStream& rng,
                         const OptimizerConfig& c) {
  detail::check_state(s, f);
  const std::size_t n = s.x.size();
  const Vec64 g = f.grad(s.x, batch);
  s.gc_count += 1;
  detail::require_finite(g, s.t, "gradient");
  if (is_refresh_step(s.t, c.k)) {
    const Vec64 h = detail::diag_hessian(f, s.x, batch, c.n_hutch, rng, s.t);
    s.hvp_count += c.n_hutch;
    s.t_hess = s.t;
    for (std::size_t i = 0; i < n; ++i)
      s.d[i] = c.beta2 * s.d[i] + (1.0 - c.beta2) * std::max(h[i], c.hess_floor);
  }
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(s.t));
  Vec64 dir(n);
  for (std::size_t i = 0; i < n; ++i) {
    s.m[i] = c.beta1 * s.m[i] + (1.0 - c.beta1) * g[i];
    s.d_bar[i] = std::max(s.d[i], c.hess_floor);
    const double z = (s.m[i] / bc1) / s.d_bar[i];
    dir[i] = std::max(std::min(z, c.clip), -c.clip);
  }
  detail::require_finite(s.d_bar, s.t, "preconditioner");
  detail::apply_update(s, dir, detail::lr_at(c, s), c.weight_decay);
  ++s.t;
}

/// Dispatches on cfg.method.
inline void optimizer_step(OptState& s, const Objective& f, const Batch& batch, RngStream& rng,
                           const OptimizerConfig& c) {
  switch (c.method) {
    case Method::kSassha: sassha_step(s, f, batch, rng, c); return;
    case Method::kMSassha: msassha_step(s, f, batch, rng, c); return;
    case Method::kSamSgdm: sam_step(FirstOrderKind::kSgdm, s, f, batch, c); return;
    case Method::kSamAdamw: sam_step(FirstOrderKind::kAdamw, s, f, batch, c); return;
    case Method::kAdaHessian: adahessian_step(s, f, batch, rng, c); return;
    case Method::kSophiaH: sophiah_step(s, f, batch, rng, c); return;
    case Method::kAdamW: first_order_step(FirstOrderKind::kAdamw, s, f, batch, c); return;
    case Method::kSgdm: first_order_step(FirstOrderKind::kSgdm, s, f, batch, c); return;
  }
}

/// Expected counters after `steps` steps (t = 1..steps).
struct CostCounts {
  long gc = 0;
  long hvp = 0;
};

inline CostCounts expected_counts(const OptimizerConfig& c, long steps) {
  long refreshes = 0;
  for (long t = 1; t <= steps; ++t) refreshes += is_refresh_step(t, c.k) ? 1 : 0;
  switch (c.method) {
    case Method::kSassha: return {2 * steps, refreshes * c.n_hutch};
    case Method::kMSassha: return {steps, refreshes * c.n_hutch};
    case Method::kSamSgdm:
    case Method::kSamAdamw: return {2 * steps, 0};
    case Method::kAdaHessian: return {steps, steps * c.n_hutch};
    case Method::kSophiaH: return {steps, refreshes * c.n_hutch};
    case Method::kAdamW:
    case Method::kSgdm: return {steps, 0};
  }
  return {};
}

}  // namespace sassha
