#pragma once
// Linear stability of SASSHA at a fixed point under a stochastic quadratic
// model H_ξ: moment matrices, the stability matrix M, the necessary
// conditions on sharpness and Hessian non-uniformity, and Monte-Carlo
// simulation of the linearized dynamics.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "sassha/numkit.hpp"

namespace sassha {

/// Finite distribution over symmetric matrices.
class Ensemble {
 public:
  static constexpr double kCommuteTol = 1e-10;

  Ensemble(std::vector<SymMat> mats, std::vector<double> probs)
      : mats_(std::move(mats)), probs_(std::move(probs)) {
    if (mats_.empty()) throw Error("ensemble: need at least one matrix");
    if (mats_.size() != probs_.size()) throw Error("ensemble: matrix/probability count mismatch");
    double total = 0.0;
    for (double p : probs_) {
      if (!(p >= 0.0)) throw Error("ensemble: probabilities must be >= 0");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-12) throw Error("ensemble: probabilities must sum to 1");
    for (const auto& m : mats_)
      if (m.dim() != mats_.front().dim()) throw Error("ensemble: matrices differ in dimension");
    commuting_ = true;
    for (std::size_t i = 0; i < mats_.size() && commuting_; ++i)
      for (std::size_t j = i + 1; j < mats_.size() && commuting_; ++j) {
        const Matrix ab = matmul(mats_[i].matrix(), mats_[j].matrix());
        const Matrix ba = matmul(mats_[j].matrix(), mats_[i].matrix());
        double s = 0.0;
        for (std::size_t k = 0; k < ab.raw().size(); ++k) {
          const double d = ab.raw()[k] - ba.raw()[k];
          s += d * d;
        }
        const double scale = std::max(1.0, mats_[i].frobenius() * mats_[j].frobenius());
        if (std::sqrt(s) > kCommuteTol * scale) commuting_ = false;
      }
  }

  /// Equal-probability ensemble.
  explicit Ensemble(std::vector<SymMat> mats)
      : Ensemble(mats, std::vector<double>(mats.size(), 1.0 / static_cast<double>(mats.size()))) {}

  std::size_t dim() const noexcept { return mats_.front().dim(); }
  std::size_t size() const noexcept { return mats_.size(); }
  const std::vector<SymMat>& mats() const noexcept { return mats_; }
  const std::vector<double>& probs() const noexcept { return probs_; }
  bool commuting() const noexcept { return commuting_; }

  /// Draws a member index according to probs.
  std::size_t sample(RngStream& rng) const {
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < probs_.size(); ++i) {
      acc += probs_[i];
      if (u < acc) return i;
    }
    return probs_.size() - 1;
  }

 private:
  std::vector<SymMat> mats_;
  std::vector<double> probs_;
  bool commuting_ = false;
};

/// Commuting ensemble Q diag(λ⁽ⁱ⁾) Qᵀ sharing a random orthonormal basis Q.
/// Each member's spectrum is base_j·(1 + spread·uᵢⱼ) with base_j log-uniform
/// in [lo, hi] and uᵢⱼ uniform in [−1, 1].
inline Ensemble random_commuting_ensemble(RngStream& rng, std::size_t d, std::size_t members,
                                          double lo, double hi, double spread) {
  if (d == 0 || members == 0) throw Error("random_commuting_ensemble: empty shape");
  if (!(lo > 0.0 && hi >= lo) || !(spread >= 0.0 && spread <= 1.0))
    throw Error("random_commuting_ensemble: need 0 < lo <= hi and spread in [0, 1]");
  std::vector<Vec64> q;
  while (q.size() < d) {
    Vec64 v = gaussian(rng, d);
    for (const auto& u : q) axpy(-dot(u, v), u, v);
    const double n = norm2(v);
    if (n < 1e-8) continue;
    v *= 1.0 / n;
    q.push_back(std::move(v));
  }
  std::vector<double> base(d);
  for (auto& b : base) b = lo * std::pow(hi / lo, rng.uniform());
  std::vector<SymMat> mats;
  for (std::size_t i = 0; i < members; ++i) {
    Matrix m(d, d);
    for (std::size_t k = 0; k < d; ++k) {
      const double lam = base[k] * (1.0 + spread * (2.0 * rng.uniform() - 1.0));
      for (std::size_t r = 0; r < d; ++r)
        for (std::size_t c = 0; c < d; ++c) m(r, c) += lam * q[k][r] * q[k][c];
    }
    mats.push_back(SymMat::symmetrized(m));
  }
  return Ensemble(std::move(mats));
}

struct Moments {
  SymMat m1, m2, m3, m4;  // E[H], E[H²], E[H³], E[H⁴]
};

inline Moments moments(const Ensemble& e) {
  const std::size_t d = e.dim();
  Moments out{SymMat(d), SymMat(d), SymMat(d), SymMat(d)};
  for (std::size_t i = 0; i < e.size(); ++i) {
    const SymMat& h = e.mats()[i];
    const SymMat h2 = sym_product(h, h);
    const SymMat h3 = sym_product(h2, h);
    const SymMat h4 = sym_product(h2, h2);
    const double p = e.probs()[i];
    out.m1 += p * h;
    out.m2 += p * h2;
    out.m3 += p * h3;
    out.m4 += p * h4;
  }
  return out;
}

struct StabilityMatrix {
  SymMat m;
  double lambda_max = 0.0;
};

/// M = (I − (η/ε)H − (ηρ/ε)H²)² + ((η² − 2ηρε)/ε²)(E H_ξ² − H²)
///     + (2η²ρ/ε²)(E H_ξ³ − H³) + (η²ρ²/ε²)(E H_ξ⁴ − H⁴),  H = E[H_ξ].
inline StabilityMatrix stability_matrix(const Ensemble& e, double eta, double rho, double eps) {
  if (!(eta >= 0.0)) throw Error("stability_matrix: eta must be >= 0");
  if (!(eps > 0.0)) throw Error("stability_matrix: eps must be > 0");
  if (!(rho >= 0.0)) throw Error("stability_matrix: rho must be >= 0");
  const std::size_t d = e.dim();
  const Moments mo = moments(e);
  const SymMat& h = mo.m1;
  const SymMat h2 = sym_product(h, h);
  const SymMat h3 = sym_product(h2, h);
  const SymMat h4 = sym_product(h2, h2);
  const double c = eta / eps;
  const SymMat a = SymMat::identity(d) - c * h - (c * rho) * h2;
  SymMat m = sym_product(a, a);
  m += ((eta * eta - 2.0 * eta * rho * eps) / (eps * eps)) * (mo.m2 - h2);
  m += (2.0 * eta * eta * rho / (eps * eps)) * (mo.m3 - h3);
  m += (eta * eta * rho * rho / (eps * eps)) * (mo.m4 - h4);
  const double lm = lambda_max(m);
  return {std::move(m), lm};
}

enum class Applicability { kApplicable, kInapplicable };

/// Condition k ∈ {1..4} of the necessary stability conditions:
///   1: 0 ≤ a(1 + ρa) ≤ 2ε/η
///   2: s₂² ≤ ε²/(η² − 2ηρε)
///   3: s₃³ ≤ ε²/(2η²ρ)
///   4: s₄⁴ ≤ ε²/(η²ρ²)
/// where a = λ_max(E[H_ξ]) and s_k = λ_max(E[H_ξᵏ] − E[H_ξ]ᵏ)^{1/k}. For
/// k = 3, 4 the left side is s_kᵏ, the λ_max of the moment gap, which is
/// the quantity the term-wise bound on M constrains. Conditions 2-4 need
/// η² − 2ηρε > 0 for that term-wise split; 3 and 4 also need ρ > 0.
struct StabilityReport {
  double a = 0.0;
  double s2 = 0.0, s3 = 0.0, s4 = 0.0;
  std::array<double, 4> lhs{};
  std::array<double, 4> bounds{};
  std::array<Applicability, 4> applicable{};
  std::array<bool, 4> conditions{};
  /// Moment gaps with eigenvalues below −1e-12·scale (k = 2, 3, 4).
  std::array<bool, 3> gap_indefinite{};
  double lambda_max_M = 0.0;
  bool stable = false;

  bool all_applicable_hold() const {
    for (std::size_t i = 0; i < 4; ++i)
      if (applicable[i] == Applicability::kApplicable && !conditions[i]) return false;
    return true;
  }
};

inline StabilityReport necessary_conditions(const Ensemble& e, double eta, double rho, double eps) {
  const auto sm = stability_matrix(e, eta, rho, eps);
  const Moments mo = moments(e);
  const SymMat& h = mo.m1;
  const SymMat h2 = sym_product(h, h);
  const SymMat h3 = sym_product(h2, h);
  const SymMat h4 = sym_product(h2, h2);

  StabilityReport r;
  r.lambda_max_M = sm.lambda_max;
  r.stable = sm.lambda_max <= 1.0;
  r.a = lambda_max(h);

  const std::array<SymMat, 3> gaps{mo.m2 - h2, mo.m3 - h3, mo.m4 - h4};
  std::array<double, 3> gap_max{};
  for (std::size_t i = 0; i < 3; ++i) {
    const auto eg = jacobi_eigs(gaps[i]);
    const double scale = std::max(1.0, gaps[i].frobenius());
    gap_max[i] = eg.values.front();
    r.gap_indefinite[i] = eg.values.back() < -1e-12 * scale;
  }
  auto root = [](double v, double k) { return v > 0.0 ? std::pow(v, 1.0 / k) : 0.0; };
  r.s2 = root(gap_max[0], 2.0);
  r.s3 = root(gap_max[1], 3.0);
  r.s4 = root(gap_max[2], 4.0);

  const double denom2 = eta * eta - 2.0 * eta * rho * eps;
  r.lhs = {r.a * (1.0 + rho * r.a), r.s2 * r.s2, std::pow(r.s3, 3.0), std::pow(r.s4, 4.0)};
  r.bounds = {eta > 0.0 ? 2.0 * eps / eta : std::numeric_limits<double>::infinity(),
              denom2 > 0.0 ? eps * eps / denom2 : std::numeric_limits<double>::infinity(),
              rho > 0.0 && eta > 0.0 ? eps * eps / (2.0 * eta * eta * rho)
                                     : std::numeric_limits<double>::infinity(),
              rho > 0.0 && eta > 0.0 ? eps * eps / (eta * eta * rho * rho)
                                     : std::numeric_limits<double>::infinity()};
  r.applicable = {Applicability::kApplicable,
                  denom2 > 0.0 ? Applicability::kApplicable : Applicability::kInapplicable,
                  denom2 > 0.0 && rho > 0.0 ? Applicability::kApplicable
                                            : Applicability::kInapplicable,
                  denom2 > 0.0 && rho > 0.0 ? Applicability::kApplicable
                                            : Applicability::kInapplicable};
  for (std::size_t k = 1; k < 4; ++k)
    if (r.applicable[k] == Applicability::kInapplicable)
      r.bounds[k] = std::numeric_limits<double>::infinity();
  r.conditions[0] = r.lhs[0] >= 0.0 && r.lhs[0] <= r.bounds[0];
  for (std::size_t k = 1; k < 4; ++k) r.conditions[k] = r.lhs[k] >= 0.0 && r.lhs[k] <= r.bounds[k];
  return r;
}

/// One step of x ← x − (η/ε)·H(x + ρHx).
inline Vec64 surrogate_step(const SymMat& h, double eta, double rho, double eps, const Vec64& x) {
  const Vec64 hx = h.apply(x);
  const Vec64 inner = x + rho * hx;
  return x - (eta / eps) * h.apply(inner);
}

struct SimulationResult {
  std::vector<double> mean_sq_norm;  // index t = 0..T
  bool diverged = false;
};

constexpr double kDivergenceClamp = 1e100;

/// Monte-Carlo E‖x_t‖² of the surrogate dynamics with H_ξ drawn i.i.d. per
/// step and trajectory. Trajectories whose ‖x‖² exceeds 1e100 are frozen at
/// their last value and flagged.
inline SimulationResult simulate_surrogate(const Ensemble& e, double eta, double rho, double eps,
                                           const Vec64& x0, long steps, int n_traj,
                                           RngStream& rng) {
  if (steps < 1 || n_traj < 1) throw Error("simulate_surrogate: need T >= 1 and n_traj >= 1");
  if (!(eps > 0.0)) throw Error("simulate_surrogate: eps must be > 0");
  if (x0.size() != e.dim()) throw Error("simulate_surrogate: x0 dimension mismatch");
  SimulationResult res;
  res.mean_sq_norm.assign(static_cast<std::size_t>(steps) + 1, 0.0);
  for (int j = 0; j < n_traj; ++j) {
    Vec64 x = x0;
    double sq = dot(x, x);
    bool frozen = false;
    res.mean_sq_norm[0] += sq;
    for (long t = 1; t <= steps; ++t) {
      if (!frozen) {
        x = surrogate_step(e.mats()[e.sample(rng)], eta, rho, eps, x);
        const double next = dot(x, x);
        if (!std::isfinite(next) || next > kDivergenceClamp) {
          frozen = true;
          res.diverged = true;
          sq = std::isfinite(next) ? std::min(next, kDivergenceClamp) : kDivergenceClamp;
        } else {
          sq = next;
        }
      }
      res.mean_sq_norm[static_cast<std::size_t>(t)] += sq;
    }
  }
  for (auto& v : res.mean_sq_norm) v /= n_traj;
  return res;
}

/// x ← x − η·(1/(√diag(H_ξ) + ε)) ⊙ H_ξ(x + ρH_ξx), one trajectory.
inline SimulationResult simulate_linearized_sassha(const Ensemble& e, double eta, double rho,
                                                   double eps, const Vec64& x0, long steps,
                                                   RngStream& rng) {
  if (steps < 1) throw Error("simulate_linearized_sassha: need T >= 1");
  if (x0.size() != e.dim()) throw Error("simulate_linearized_sassha: x0 dimension mismatch");
  std::vector<Vec64> scale;
  for (const auto& h : e.mats()) {
    Vec64 s(e.dim());
    for (std::size_t i = 0; i < e.dim(); ++i) {
      if (h(i, i) < 0.0)
        throw Error("simulate_linearized_sassha: ensemble has a negative diagonal entry");
      s[i] = 1.0 / (std::sqrt(h(i, i)) + eps);
    }
    scale.push_back(std::move(s));
  }
  SimulationResult res;
  Vec64 x = x0;
  res.mean_sq_norm.push_back(dot(x, x));
  for (long t = 1; t <= steps; ++t) {
    const std::size_t k = e.sample(rng);
    const SymMat& h = e.mats()[k];
    const Vec64 hx = h.apply(x);
    const Vec64 g = h.apply(x + rho * hx);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] -= eta * scale[k][i] * g[i];
    double sq = dot(x, x);
    if (!std::isfinite(sq) || sq > kDivergenceClamp) {
      res.diverged = true;
      sq = kDivergenceClamp;
      res.mean_sq_norm.resize(static_cast<std::size_t>(steps) + 1, sq);
      return res;
    }
    res.mean_sq_norm.push_back(sq);
  }
  return res;
}

}  // namespace sassha
