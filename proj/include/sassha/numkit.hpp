#pragma once
// Dense linear algebra, seeded randomness and eigen-routines.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace sassha {

/// Base class for every contract violation raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Vec64
// ---------------------------------------------------------------------------

/// Flat dense vector of 64-bit floats.
class Vec64 {
 public:
  Vec64() = default;
  explicit Vec64(std::size_t n, double fill = 0.0) : data_(n, fill) {}
  Vec64(std::initializer_list<double> init) : data_(init) {}
  explicit Vec64(std::vector<double> data) : data_(std::move(data)) {}

  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  auto begin() noexcept { return data_.begin(); }
  auto end() noexcept { return data_.end(); }
  auto begin() const noexcept { return data_.begin(); }
  auto end() const noexcept { return data_.end(); }

  std::span<double> span() noexcept { return data_; }
  std::span<const double> span() const noexcept { return data_; }
  const std::vector<double>& raw() const noexcept { return data_; }

  bool operator==(const Vec64&) const = default;

  Vec64& operator+=(const Vec64& o) {
    check_same(o);
    for (std::size_t i = 0; i < size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Vec64& operator-=(const Vec64& o) {
    check_same(o);
    for (std::size_t i = 0; i < size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Vec64& operator*=(double s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  void check_same(const Vec64& o) const {
    if (o.size() != size()) {
      throw Error("vector dimension mismatch: " + std::to_string(size()) + " vs " +
                  std::to_string(o.size()));
    }
  }

 private:
  std::vector<double> data_;
};

inline Vec64 operator+(Vec64 a, const Vec64& b) { return a += b; }
inline Vec64 operator-(Vec64 a, const Vec64& b) { return a -= b; }
inline Vec64 operator*(double s, Vec64 a) { return a *= s; }
inline Vec64 operator*(Vec64 a, double s) { return a *= s; }

inline double dot(const Vec64& a, const Vec64& b) {
  a.check_same(b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(const Vec64& a) { return std::sqrt(dot(a, a)); }

/// y += alpha * x
inline void axpy(double alpha, const Vec64& x, Vec64& y) {
  y.check_same(x);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline Vec64 hadamard(const Vec64& a, const Vec64& b) {
  a.check_same(b);
  Vec64 out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

inline bool all_finite(const Vec64& a) {
  return std::all_of(a.begin(), a.end(), [](double v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------
// Matrices
// ---------------------------------------------------------------------------

/// Row-major general dense matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t d) {
    Matrix m(d, d);
    for (std::size_t i = 0; i < d; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  const std::vector<double>& raw() const noexcept { return data_; }

  Vec64 column(std::size_t c) const {
    Vec64 out(rows_);
    for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
    return out;
  }

  Matrix transpose() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
  }

  double frobenius() const {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return std::sqrt(s);
  }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw Error("matmul: inner dimension mismatch");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  return out;
}

inline Vec64 matvec(const Matrix& a, const Vec64& x) {
  if (a.cols() != x.size()) throw Error("matvec: dimension mismatch");
  Vec64 out(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    auto r = a.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) s += r[j] * x[j];
    out[i] = s;
  }
  return out;
}

/// Dense symmetric matrix. Construction checks symmetry to 1e-12 relative
/// to the Frobenius norm.
class SymMat {
 public:
  static constexpr double kSymmetryTol = 1e-12;

  SymMat() = default;
  explicit SymMat(std::size_t d) : m_(d, d) {}
  explicit SymMat(Matrix m) : m_(std::move(m)) { validate(); }
  SymMat(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t d = rows.size();
    m_ = Matrix(d, d);
    std::size_t r = 0;
    for (const auto& row : rows) {
      if (row.size() != d) throw Error("SymMat: matrix must be square");
      std::size_t c = 0;
      for (double v : row) m_(r, c++) = v;
      ++r;
    }
    validate();
  }

  static SymMat identity(std::size_t d) { return SymMat(Matrix::identity(d)); }
  static SymMat diagonal(const Vec64& diag) {
    SymMat s(diag.size());
    for (std::size_t i = 0; i < diag.size(); ++i) s.m_(i, i) = diag[i];
    return s;
  }
  /// Symmetrizes (m + mᵀ)/2 without checking; used after products of
  /// symmetric factors that are symmetric only up to rounding.
  static SymMat symmetrized(const Matrix& m) {
    if (m.rows() != m.cols()) throw Error("SymMat: matrix must be square");
    SymMat s(m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i)
      for (std::size_t j = 0; j < m.cols(); ++j) s.m_(i, j) = 0.5 * (m(i, j) + m(j, i));
    return s;
  }

  std::size_t dim() const noexcept { return m_.rows(); }
  double operator()(std::size_t r, std::size_t c) const { return m_(r, c); }
  /// Sets both (r,c) and (c,r).
  void set(std::size_t r, std::size_t c, double v) {
    m_(r, c) = v;
    m_(c, r) = v;
  }
  const Matrix& matrix() const noexcept { return m_; }
  double frobenius() const { return m_.frobenius(); }
  double trace() const {
    double s = 0.0;
    for (std::size_t i = 0; i < dim(); ++i) s += m_(i, i);
    return s;
  }
  Vec64 diag() const {
    Vec64 d(dim());
    for (std::size_t i = 0; i < dim(); ++i) d[i] = m_(i, i);
    return d;
  }
  Vec64 apply(const Vec64& v) const { return matvec(m_, v); }

  SymMat& operator+=(const SymMat& o) {
    check_same(o);
    for (std::size_t i = 0; i < dim(); ++i)
      for (std::size_t j = 0; j < dim(); ++j) m_(i, j) += o.m_(i, j);
    return *this;
  }
  SymMat& operator-=(const SymMat& o) {
    check_same(o);
    for (std::size_t i = 0; i < dim(); ++i)
      for (std::size_t j = 0; j < dim(); ++j) m_(i, j) -= o.m_(i, j);
    return *this;
  }
  SymMat& operator*=(double s) {
    for (std::size_t i = 0; i < dim(); ++i)
      for (std::size_t j = 0; j < dim(); ++j) m_(i, j) *= s;
    return *this;
  }

  void check_same(const SymMat& o) const {
    if (o.dim() != dim()) throw Error("SymMat dimension mismatch");
  }

 private:
  void validate() const {
    if (m_.rows() != m_.cols()) throw Error("SymMat: matrix must be square");
    const double scale = std::max(1e-300, m_.frobenius());
    double worst = 0.0;
    for (std::size_t i = 0; i < m_.rows(); ++i)
      for (std::size_t j = i + 1; j < m_.cols(); ++j)
        worst = std::max(worst, std::abs(m_(i, j) - m_(j, i)));
    if (worst > kSymmetryTol * scale) {
      std::ostringstream os;
      os << "SymMat: input not symmetric (max |a_ij - a_ji| = " << worst
         << ", Frobenius norm = " << scale << ")";
      throw Error(os.str());
    }
  }

  Matrix m_;
};

inline SymMat operator+(SymMat a, const SymMat& b) { return a += b; }
inline SymMat operator-(SymMat a, const SymMat& b) { return a -= b; }
inline SymMat operator*(double s, SymMat a) { return a *= s; }

/// Product of two symmetric matrices, symmetrized. Exact for commuting
/// factors and for powers of one matrix.
inline SymMat sym_product(const SymMat& a, const SymMat& b) {
  return SymMat::symmetrized(matmul(a.matrix(), b.matrix()));
}

// ---------------------------------------------------------------------------
// RngStream
// ---------------------------------------------------------------------------

/// Seeded random stream: xoshiro256** state seeded through splitmix64.
/// Gaussian draws use Box-Muller on top of the 53-bit uniform so the
/// sequence is identical on every platform.
class RngStream {
 public:
  static constexpr std::string_view kAlgorithm = "xoshiro256**/splitmix64-seed/box-muller";

  explicit RngStream(std::uint64_t seed = 0) : seed_(seed) {
    std::uint64_t sm = seed;
    for (auto& s : state_) s = splitmix64(sm);
  }

  std::uint64_t seed() const noexcept { return seed_; }

  /// Child stream keyed by a label; the parent's state is not advanced.
  RngStream child(std::string_view label) const {
    // FNV-1a over the label, mixed with the parent seed.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : label) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
    std::uint64_t mix = seed_ ^ (h + 0x9e3779b97f4a7c15ULL + (seed_ << 6) + (seed_ >> 2));
    return RngStream(splitmix64(mix));
  }
  RngStream child(std::uint64_t index) const { return child("#" + std::to_string(index)); }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n), rejection-sampled to avoid modulo bias.
  std::uint64_t uniform_index(std::uint64_t n) {
    if (n == 0) throw Error("uniform_index: empty range");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t r;
    do {
      r = next_u64();
    } while (r >= limit);
    return r % n;
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  /// Fisher-Yates permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[uniform_index(i)]);
    return p;
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  static std::uint64_t splitmix64(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t state_[4]{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

inline Vec64 rademacher(RngStream& rng, std::size_t d) {
  if (d == 0) throw Error("rademacher: dimension must be positive");
  Vec64 z(d);
  // one bit per entry, 64 entries per draw
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < d; ++i) {
    if (i % 64 == 0) bits = rng.next_u64();
    z[i] = (bits & 1ULL) ? 1.0 : -1.0;
    bits >>= 1;
  }
  return z;
}

inline Vec64 gaussian(RngStream& rng, std::size_t d) {
  Vec64 z(d);
  for (auto& v : z) v = rng.normal();
  return z;
}

inline Vec64 unit_sphere_direction(RngStream& rng, std::size_t d) {
  if (d == 0) throw Error("unit_sphere_direction: dimension must be positive");
  for (;;) {
    Vec64 z = gaussian(rng, d);
    const double n = norm2(z);
    if (n > 1e-300) {
      for (auto& v : z) v /= n;
      return z;
    }
  }
}

// ---------------------------------------------------------------------------
// Eigen-routines
// ---------------------------------------------------------------------------

struct EigenDecomposition {
  std::vector<double> values;  // descending
  Matrix vectors;              // column j pairs with values[j]
};

/// Cyclic-by-row Jacobi rotations. Stops once the off-diagonal Frobenius
/// norm falls below 1e-12 of the input's Frobenius norm.
inline EigenDecomposition jacobi_eigs(const SymMat& input, int max_sweeps = 100) {
  const std::size_t d = input.dim();
  if (d == 0) throw Error("jacobi_eigs: empty matrix");
  Matrix a = input.matrix();
  Matrix v = Matrix::identity(d);
  const double target = 1e-12 * input.frobenius();

  auto off_norm = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j)
        if (i != j) s += a(i, j) * a(i, j);
    return std::sqrt(s);
  };

  for (int sweep = 0; sweep < max_sweeps && off_norm() > target; ++sweep) {
    for (std::size_t p = 0; p + 1 < d; ++p) {
      for (std::size_t q = p + 1; q < d; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < d; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < d; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < d; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });
  EigenDecomposition out{std::vector<double>(d), Matrix(d, d)};
  for (std::size_t j = 0; j < d; ++j) {
    out.values[j] = a(order[j], order[j]);
    for (std::size_t k = 0; k < d; ++k) out.vectors(k, j) = v(k, order[j]);
  }
  return out;
}

/// V diag(values) Vᵀ
inline Matrix reconstruct(const EigenDecomposition& e) {
  const std::size_t d = e.values.size();
  Matrix out(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += e.vectors(i, k) * e.values[k] * e.vectors(j, k);
      out(i, j) = s;
    }
  return out;
}

inline double lambda_max(const SymMat& m) { return jacobi_eigs(m).values.front(); }

/// Eigenvalue of largest magnitude, sign preserved.
inline double dominant_magnitude(const EigenDecomposition& e) {
  return std::abs(e.values.front()) >= std::abs(e.values.back()) ? e.values.front()
                                                                  : e.values.back();
}

struct PowerResult {
  double lambda = 0.0;
  Vec64 vec;
  bool converged = false;
  int iterations = 0;
};

/// Deterministic default start vector for power iteration.
inline Vec64 power_iteration_start(std::size_t d) {
  RngStream rng(0x5eed'0f'57a7'0001ULL);
  return unit_sphere_direction(rng, d);
}

/// Power iteration on a self-adjoint operator. Reports the Rayleigh
/// quotient of the dominant-magnitude eigenvector (signed). Convergence is
/// declared when successive Rayleigh quotients differ by less than tol
/// relative to the current quotient and the residual ‖Hv − λv‖ is below
/// √tol·|λ|. The residual test keeps a ±λ pair, whose quotient is constant
/// while the iterate oscillates, from passing as converged.
template <class Apply>
PowerResult power_iteration(Apply&& apply, std::size_t d, int max_iters = 200, double tol = 1e-8,
                            Vec64 start = {}) {
  if (max_iters < 1) throw Error("power_iteration: max_iters must be >= 1");
  if (d == 0) throw Error("power_iteration: dimension must be positive");
  Vec64 v = start.empty() ? power_iteration_start(d) : std::move(start);
  if (v.size() != d) throw Error("power_iteration: start vector dimension mismatch");
  v *= 1.0 / norm2(v);

  PowerResult res;
  double prev = 0.0;
  for (int it = 1; it <= max_iters; ++it) {
    Vec64 hv = apply(static_cast<const Vec64&>(v));
    const double rq = dot(v, hv);
    const double n = norm2(hv);
    res.iterations = it;
    if (!std::isfinite(n)) {
      res.lambda = rq;
      res.vec = v;
      return res;
    }
    if (n == 0.0) {
      res.lambda = 0.0;
      res.vec = v;
      res.converged = false;
      return res;
    }
    res.lambda = rq;
    double resid = 0.0;
    for (std::size_t i = 0; i < d; ++i) resid += (hv[i] - rq * v[i]) * (hv[i] - rq * v[i]);
    if (it > 1 && std::abs(rq - prev) < tol * std::max(std::abs(rq), 1e-300) &&
        std::sqrt(resid) <= std::sqrt(tol) * std::abs(rq)) {
      res.vec = v;
      res.converged = true;
      return res;
    }
    prev = rq;
    hv *= 1.0 / n;
    v = std::move(hv);
  }
  res.vec = v;
  return res;
}

}  // namespace sassha
