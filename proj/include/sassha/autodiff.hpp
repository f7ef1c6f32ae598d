#pragma once
// Tape-based reverse-mode differentiation. Hessian-vector products run the
// reverse sweep on dual numbers (forward-over-reverse), so one pass yields
// both the gradient (primal part) and H·v (tangent part).

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "sassha/numkit.hpp"

namespace sassha::ad {

enum class Op : std::uint8_t {
  kConst,
  kParam,
  kInput,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kNeg,
  kExp,
  kLog,
  kTanh,
  kRelu,
  kPow,
  kDot,
  kSum,
};

struct Node {
  Op op = Op::kConst;
  std::uint32_t a = 0;
  std::uint32_t b = 0;
  std::uint32_t args_begin = 0;  // kDot: interleaved (lhs, rhs) pairs; kSum: operands
  std::uint32_t args_count = 0;
  double c = 0.0;  // constant value, pow exponent, or leaf index
};

struct DualNumber {
  double primal = 0.0;
  double tangent = 0.0;

  DualNumber() = default;
  constexpr DualNumber(double p, double t = 0.0) : primal(p), tangent(t) {}

  DualNumber& operator+=(const DualNumber& o) {
    primal += o.primal;
    tangent += o.tangent;
    return *this;
  }
  DualNumber& operator-=(const DualNumber& o) {
    primal -= o.primal;
    tangent -= o.tangent;
    return *this;
  }
};

inline DualNumber operator+(DualNumber a, DualNumber b) {
  return {a.primal + b.primal, a.tangent + b.tangent};
}
inline DualNumber operator-(DualNumber a, DualNumber b) {
  return {a.primal - b.primal, a.tangent - b.tangent};
}
inline DualNumber operator-(DualNumber a) { return {-a.primal, -a.tangent}; }
inline DualNumber operator*(DualNumber a, DualNumber b) {
  return {a.primal * b.primal, a.primal * b.tangent + a.tangent * b.primal};
}
inline DualNumber operator/(DualNumber a, DualNumber b) {
  const double q = a.primal / b.primal;
  return {q, (a.tangent - q * b.tangent) / b.primal};
}
inline DualNumber exp(DualNumber a) {
  const double e = std::exp(a.primal);
  return {e, e * a.tangent};
}
inline DualNumber log(DualNumber a) { return {std::log(a.primal), a.tangent / a.primal}; }
inline DualNumber tanh(DualNumber a) {
  const double t = std::tanh(a.primal);
  return {t, (1.0 - t * t) * a.tangent};
}
inline DualNumber pow(DualNumber a, double c) {
  if (c == 0.0) return {1.0, 0.0};
  const double p = std::pow(a.primal, c);
  return {p, c * std::pow(a.primal, c - 1.0) * a.tangent};
}

inline double primal_of(double v) { return v; }
inline double primal_of(const DualNumber& v) { return v.primal; }
inline bool finite_of(double v) { return std::isfinite(v); }
inline bool finite_of(const DualNumber& v) {
  return std::isfinite(v.primal) && std::isfinite(v.tangent);
}

class TapeBuilder;

/// Handle to a node under construction.
struct Var {
  TapeBuilder* tape = nullptr;
  std::uint32_t id = 0;
};

/// Immutable expression graph with one scalar output. Leaves are
/// constants, parameter reads x[i] and input reads u[i]; inputs carry data
/// (features, targets) that can be rebound between evaluations without
/// rebuilding the graph.
class Tape {
 public:
  std::size_t num_params() const noexcept { return num_params_; }
  std::size_t num_inputs() const noexcept { return num_inputs_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  std::uint32_t output() const noexcept { return output_; }
  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  const std::vector<std::uint32_t>& args() const noexcept { return args_; }

 private:
  friend class TapeBuilder;
  std::vector<Node> nodes_;
  std::vector<std::uint32_t> args_;
  std::size_t num_params_ = 0;
  std::size_t num_inputs_ = 0;
  std::uint32_t output_ = 0;
};

class TapeBuilder {
 public:
  TapeBuilder(std::size_t num_params, std::size_t num_inputs = 0)
      : param_ids_(num_params, kUnset), input_ids_(num_inputs, kUnset) {
    tape_.num_params_ = num_params;
    tape_.num_inputs_ = num_inputs;
  }
  TapeBuilder(const TapeBuilder&) = delete;
  TapeBuilder& operator=(const TapeBuilder&) = delete;

  Var constant(double v) { return push({Op::kConst, 0, 0, 0, 0, v}); }

  Var param(std::size_t i) {
    if (i >= param_ids_.size()) throw Error("TapeBuilder: parameter index out of range");
    if (param_ids_[i] == kUnset)
      param_ids_[i] = push({Op::kParam, 0, 0, 0, 0, static_cast<double>(i)}).id;
    return {this, param_ids_[i]};
  }

  Var input(std::size_t i) {
    if (i >= input_ids_.size()) throw Error("TapeBuilder: input index out of range");
    if (input_ids_[i] == kUnset)
      input_ids_[i] = push({Op::kInput, 0, 0, 0, 0, static_cast<double>(i)}).id;
    return {this, input_ids_[i]};
  }

  Var binary(Op op, Var a, Var b) { return push({op, own(a), own(b), 0, 0, 0.0}); }
  Var unary(Op op, Var a, double c = 0.0) { return push({op, own(a), 0, 0, 0, c}); }

  Var dot(std::span<const Var> lhs, std::span<const Var> rhs) {
    if (lhs.size() != rhs.size() || lhs.empty()) throw Error("TapeBuilder: dot size mismatch");
    const auto begin = static_cast<std::uint32_t>(tape_.args_.size());
    for (std::size_t i = 0; i < lhs.size(); ++i) {
      tape_.args_.push_back(own(lhs[i]));
      tape_.args_.push_back(own(rhs[i]));
    }
    return push({Op::kDot, 0, 0, begin, static_cast<std::uint32_t>(lhs.size()), 0.0});
  }

  Var sum(std::span<const Var> terms) {
    if (terms.empty()) throw Error("TapeBuilder: empty sum");
    const auto begin = static_cast<std::uint32_t>(tape_.args_.size());
    for (const Var& v : terms) tape_.args_.push_back(own(v));
    return push({Op::kSum, 0, 0, begin, static_cast<std::uint32_t>(terms.size()), 0.0});
  }

  /// Seals the graph; the builder must not be used afterwards.
  Tape finish(Var out) {
    tape_.output_ = own(out);
    return std::move(tape_);
  }

 private:
  static constexpr std::uint32_t kUnset = 0xffffffffu;

  std::uint32_t own(Var v) const {
    if (v.tape != this) throw Error("TapeBuilder: variable belongs to another tape");
    return v.id;
  }
  Var push(Node n) {
    tape_.nodes_.push_back(n);
    return {this, static_cast<std::uint32_t>(tape_.nodes_.size() - 1)};
  }

  Tape tape_;
  std::vector<std::uint32_t> param_ids_;
  std::vector<std::uint32_t> input_ids_;
};

inline Var operator+(Var a, Var b) { return a.tape->binary(Op::kAdd, a, b); }
inline Var operator-(Var a, Var b) { return a.tape->binary(Op::kSub, a, b); }
inline Var operator*(Var a, Var b) { return a.tape->binary(Op::kMul, a, b); }
inline Var operator/(Var a, Var b) { return a.tape->binary(Op::kDiv, a, b); }
inline Var operator-(Var a) { return a.tape->unary(Op::kNeg, a); }
inline Var operator+(Var a, double b) { return a + a.tape->constant(b); }
inline Var operator+(double a, Var b) { return b.tape->constant(a) + b; }
inline Var operator-(Var a, double b) { return a - a.tape->constant(b); }
inline Var operator-(double a, Var b) { return b.tape->constant(a) - b; }
inline Var operator*(Var a, double b) { return a * a.tape->constant(b); }
inline Var operator*(double a, Var b) { return b.tape->constant(a) * b; }
inline Var operator/(Var a, double b) { return a / a.tape->constant(b); }
inline Var exp(Var a) { return a.tape->unary(Op::kExp, a); }
inline Var log(Var a) { return a.tape->unary(Op::kLog, a); }
inline Var tanh(Var a) { return a.tape->unary(Op::kTanh, a); }
/// max(a, 0); derivative at 0 is 0.
inline Var relu(Var a) { return a.tape->unary(Op::kRelu, a); }
/// a^c for a constant exponent c.
inline Var pow(Var a, double c) { return a.tape->unary(Op::kPow, a, c); }
inline Var dot(std::span<const Var> a, std::span<const Var> b) { return a.front().tape->dot(a, b); }
inline Var sum(std::span<const Var> terms) { return terms.front().tape->sum(terms); }

/// Scratch buffers for one evaluation. One per thread.
struct Workspace {
  std::vector<double> values;
  std::vector<double> adjoints;
  std::vector<DualNumber> dual_values;
  std::vector<DualNumber> dual_adjoints;
};

struct EvalResult {
  double value = 0.0;
  bool finite = true;
};

namespace detail {

inline void check_dims(const Tape& tape, std::span<const double> x, std::span<const double> u) {
  if (x.size() != tape.num_params())
    throw Error("tape: parameter dimension mismatch (expected " +
                std::to_string(tape.num_params()) + ", got " + std::to_string(x.size()) + ")");
  if (u.size() != tape.num_inputs())
    throw Error("tape: input dimension mismatch (expected " + std::to_string(tape.num_inputs()) +
                ", got " + std::to_string(u.size()) + ")");
}

inline double relu_value(double a) { return a > 0.0 ? a : 0.0; }
inline DualNumber relu_value(const DualNumber& a) {
  return a.primal > 0.0 ? a : DualNumber{0.0, 0.0};
}
inline double std_exp(double a) { return std::exp(a); }
inline double std_log(double a) { return std::log(a); }
inline double std_tanh(double a) { return std::tanh(a); }
inline double std_pow(double a, double c) { return c == 0.0 ? 1.0 : std::pow(a, c); }
inline DualNumber std_exp(const DualNumber& a) { return exp(a); }
inline DualNumber std_log(const DualNumber& a) { return log(a); }
inline DualNumber std_tanh(const DualNumber& a) { return tanh(a); }
inline DualNumber std_pow(const DualNumber& a, double c) { return pow(a, c); }

template <class T>
T leaf_param(std::span<const double> x, std::span<const double> dir, std::size_t i);
template <>
inline double leaf_param<double>(std::span<const double> x, std::span<const double>,
                                 std::size_t i) {
  return x[i];
}
template <>
inline DualNumber leaf_param<DualNumber>(std::span<const double> x, std::span<const double> dir,
                                         std::size_t i) {
  return {x[i], dir[i]};
}

template <class T>
void forward(const Tape& tape, std::span<const double> x, std::span<const double> dir,
             std::span<const double> u, std::vector<T>& val) {
  const auto& nodes = tape.nodes();
  const auto& args = tape.args();
  val.resize(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const Node& n = nodes[i];
    switch (n.op) {
      case Op::kConst: val[i] = T(n.c); break;
      case Op::kParam: val[i] = leaf_param<T>(x, dir, static_cast<std::size_t>(n.c)); break;
      case Op::kInput: val[i] = T(u[static_cast<std::size_t>(n.c)]); break;
      case Op::kAdd: val[i] = val[n.a] + val[n.b]; break;
      case Op::kSub: val[i] = val[n.a] - val[n.b]; break;
      case Op::kMul: val[i] = val[n.a] * val[n.b]; break;
      case Op::kDiv: val[i] = val[n.a] / val[n.b]; break;
      case Op::kNeg: val[i] = -val[n.a]; break;
      case Op::kExp: val[i] = std_exp(val[n.a]); break;
      case Op::kLog: val[i] = std_log(val[n.a]); break;
      case Op::kTanh: val[i] = std_tanh(val[n.a]); break;
      case Op::kRelu: val[i] = relu_value(val[n.a]); break;
      case Op::kPow: val[i] = std_pow(val[n.a], n.c); break;
      case Op::kDot: {
        T s(0.0);
        for (std::uint32_t k = 0; k < n.args_count; ++k) {
          const std::uint32_t p = n.args_begin + 2 * k;
          s += val[args[p]] * val[args[p + 1]];
        }
        val[i] = s;
        break;
      }
      case Op::kSum: {
        T s(0.0);
        for (std::uint32_t k = 0; k < n.args_count; ++k) s += val[args[n.args_begin + k]];
        val[i] = s;
        break;
      }
    }
  }
}

/// Reverse sweep. With T = DualNumber the adjoints carry tangents, so the
/// parameter adjoints' tangent parts are H·dir.
template <class T>
void reverse(const Tape& tape, const std::vector<T>& val, std::vector<T>& adj) {
  const auto& nodes = tape.nodes();
  const auto& args = tape.args();
  adj.assign(nodes.size(), T(0.0));
  adj[tape.output()] = T(1.0);
  for (std::size_t i = nodes.size(); i-- > 0;) {
    const Node& n = nodes[i];
    const T g = adj[i];
    switch (n.op) {
      case Op::kConst:
      case Op::kParam:
      case Op::kInput: break;
      case Op::kAdd:
        adj[n.a] += g;
        adj[n.b] += g;
        break;
      case Op::kSub:
        adj[n.a] += g;
        adj[n.b] -= g;
        break;
      case Op::kMul:
        adj[n.a] += g * val[n.b];
        adj[n.b] += g * val[n.a];
        break;
      case Op::kDiv:
        adj[n.a] += g / val[n.b];
        adj[n.b] -= g * val[i] / val[n.b];
        break;
      case Op::kNeg: adj[n.a] -= g; break;
      case Op::kExp: adj[n.a] += g * val[i]; break;
      case Op::kLog: adj[n.a] += g / val[n.a]; break;
      case Op::kTanh: adj[n.a] += g * (T(1.0) - val[i] * val[i]); break;
      case Op::kRelu:
        if (primal_of(val[n.a]) > 0.0) adj[n.a] += g;
        break;
      case Op::kPow:
        if (n.c != 0.0) adj[n.a] += g * (T(n.c) * std_pow(val[n.a], n.c - 1.0));
        break;
      case Op::kDot:
        for (std::uint32_t k = 0; k < n.args_count; ++k) {
          const std::uint32_t p = n.args_begin + 2 * k;
          const std::uint32_t l = args[p], r = args[p + 1];
          adj[l] += g * val[r];
          adj[r] += g * val[l];
        }
        break;
      case Op::kSum:
        for (std::uint32_t k = 0; k < n.args_count; ++k) adj[args[n.args_begin + k]] += g;
        break;
    }
  }
}

}  // namespace detail

inline EvalResult eval(const Tape& tape, std::span<const double> x, std::span<const double> u,
                       Workspace& ws) {
  detail::check_dims(tape, x, u);
  detail::forward<double>(tape, x, {}, u, ws.values);
  const double v = ws.values[tape.output()];
  return {v, std::isfinite(v)};
}

inline EvalResult eval(const Tape& tape, const Vec64& x, std::span<const double> u = {}) {
  Workspace ws;
  return eval(tape, x.span(), u, ws);
}

/// grad_out += scale * ∇f; returns f.
inline EvalResult accumulate_grad(const Tape& tape, std::span<const double> x,
                                  std::span<const double> u, double scale, Vec64& grad_out,
                                  Workspace& ws) {
  detail::check_dims(tape, x, u);
  if (grad_out.size() != x.size()) throw Error("tape: gradient buffer dimension mismatch");
  detail::forward<double>(tape, x, {}, u, ws.values);
  detail::reverse<double>(tape, ws.values, ws.adjoints);
  const auto& nodes = tape.nodes();
  for (std::size_t i = 0; i < nodes.size(); ++i)
    if (nodes[i].op == Op::kParam) grad_out[static_cast<std::size_t>(nodes[i].c)] += scale * ws.adjoints[i];
  const double v = ws.values[tape.output()];
  return {v, std::isfinite(v)};
}

/// hvp_out += scale * ∇²f·dir, and grad_out += scale * ∇f when non-null.
inline EvalResult accumulate_hvp(const Tape& tape, std::span<const double> x,
                                 std::span<const double> dir, std::span<const double> u,
                                 double scale, Vec64& hvp_out, Vec64* grad_out, Workspace& ws) {
  detail::check_dims(tape, x, u);
  if (dir.size() != x.size()) throw Error("tape: direction dimension mismatch");
  if (hvp_out.size() != x.size()) throw Error("tape: hvp buffer dimension mismatch");
  detail::forward<DualNumber>(tape, x, dir, u, ws.dual_values);
  detail::reverse<DualNumber>(tape, ws.dual_values, ws.dual_adjoints);
  const auto& nodes = tape.nodes();
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].op != Op::kParam) continue;
    const auto p = static_cast<std::size_t>(nodes[i].c);
    hvp_out[p] += scale * ws.dual_adjoints[i].tangent;
    if (grad_out) (*grad_out)[p] += scale * ws.dual_adjoints[i].primal;
  }
  const double v = ws.dual_values[tape.output()].primal;
  return {v, std::isfinite(v)};
}

inline Vec64 grad(const Tape& tape, const Vec64& x, std::span<const double> u = {}) {
  Workspace ws;
  Vec64 g(x.size());
  accumulate_grad(tape, x.span(), u, 1.0, g, ws);
  return g;
}

inline Vec64 hvp(const Tape& tape, const Vec64& x, const Vec64& v, std::span<const double> u = {}) {
  Workspace ws;
  Vec64 out(x.size());
  accumulate_hvp(tape, x.span(), v.span(), u, 1.0, out, nullptr, ws);
  return out;
}

}  // namespace sassha::ad
