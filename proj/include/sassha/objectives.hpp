#pragma once
// Desk-scale problem suite: deterministic and stochastic objectives,
// datasets, batching and label-noise injection.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sassha/autodiff.hpp"
#include "sassha/numkit.hpp"

namespace sassha {

// ---------------------------------------------------------------------------
// Batches
// ---------------------------------------------------------------------------

/// Index list into a dataset. Indices are unique and in range.
class Batch {
 public:
  Batch() = default;
  Batch(std::vector<std::size_t> indices, std::size_t n) : indices_(std::move(indices)) {
    if (indices_.empty()) throw Error("Batch: empty index list");
    std::vector<bool> seen(n, false);
    for (std::size_t i : indices_) {
      if (i >= n) throw Error("Batch: index " + std::to_string(i) + " out of range");
      if (seen[i]) throw Error("Batch: duplicate index " + std::to_string(i));
      seen[i] = true;
    }
  }

  static Batch full(std::size_t n) {
    Batch b;
    b.indices_.resize(n);
    for (std::size_t i = 0; i < n; ++i) b.indices_[i] = i;
    return b;
  }

  std::size_t size() const noexcept { return indices_.size(); }
  const std::vector<std::size_t>& indices() const noexcept { return indices_; }
  auto begin() const noexcept { return indices_.begin(); }
  auto end() const noexcept { return indices_.end(); }
  bool operator==(const Batch&) const = default;

 private:
  std::vector<std::size_t> indices_;
};

/// Epoch-based sampler: each epoch is a fresh random permutation consumed
/// in chunks of `size`; the last chunk of an epoch may be shorter.
class MinibatchSampler {
 public:
  MinibatchSampler(RngStream rng, std::size_t n, std::size_t size)
      : rng_(std::move(rng)), n_(n), size_(size) {
    if (size == 0 || size > n) {
      throw Error("minibatch: size must satisfy 1 <= size <= n (size=" + std::to_string(size) +
                  ", n=" + std::to_string(n) + ")");
    }
  }

  Batch next() {
    if (cursor_ >= perm_.size()) {
      perm_ = rng_.permutation(n_);
      cursor_ = 0;
      ++epoch_;
    }
    const std::size_t end = std::min(cursor_ + size_, perm_.size());
    std::vector<std::size_t> idx(perm_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                 perm_.begin() + static_cast<std::ptrdiff_t>(end));
    cursor_ = end;
    return Batch(std::move(idx), n_);
  }

  std::size_t batches_per_epoch() const noexcept { return (n_ + size_ - 1) / size_; }
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  RngStream rng_;
  std::size_t n_;
  std::size_t size_;
  std::vector<std::size_t> perm_;
  std::size_t cursor_ = 0;
  std::size_t epoch_ = 0;
};

/// All batches of one epoch.
inline std::vector<Batch> minibatch_epoch(const RngStream& rng, std::size_t n, std::size_t size) {
  MinibatchSampler s(rng, n, size);
  std::vector<Batch> out;
  for (std::size_t i = 0; i < s.batches_per_epoch(); ++i) out.push_back(s.next());
  return out;
}

// ---------------------------------------------------------------------------
// Objective interface
// ---------------------------------------------------------------------------

/// f, ∇f and ∇²f·v on a batch. Per-example losses are averaged.
class Objective {
 public:
  virtual ~Objective() = default;

  virtual std::size_t dim() const = 0;
  /// Number of examples a Batch can index; 1 for deterministic objectives.
  virtual std::size_t num_examples() const { return 1; }

  virtual double value(const Vec64& x, const Batch& batch) const = 0;
  virtual Vec64 grad(const Vec64& x, const Batch& batch) const = 0;
  virtual Vec64 hvp(const Vec64& x, const Vec64& v, const Batch& batch) const = 0;

  Batch full_batch() const { return Batch::full(num_examples()); }
  double value_full(const Vec64& x) const { return value(x, full_batch()); }
  Vec64 grad_full(const Vec64& x) const { return grad(x, full_batch()); }
  Vec64 hvp_full(const Vec64& x, const Vec64& v) const { return hvp(x, v, full_batch()); }

 protected:
  void check_x(const Vec64& x) const {
    if (x.size() != dim())
      throw Error("objective: parameter dimension mismatch (expected " + std::to_string(dim()) +
                  ", got " + std::to_string(x.size()) + ")");
  }
};

// ---------------------------------------------------------------------------
// Quadratic
// ---------------------------------------------------------------------------

/// f(x) = ½xᵀHx + bᵀx
class QuadraticObjective final : public Objective {
 public:
  QuadraticObjective(SymMat h, Vec64 b) : h_(std::move(h)), b_(std::move(b)) {
    if (b_.size() != h_.dim()) throw Error("quadratic: b dimension does not match H");
  }
  explicit QuadraticObjective(SymMat h) : QuadraticObjective(h, Vec64(h.dim())) {}

  std::size_t dim() const override { return h_.dim(); }
  double value(const Vec64& x, const Batch&) const override {
    check_x(x);
    return 0.5 * dot(x, h_.apply(x)) + dot(b_, x);
  }
  Vec64 grad(const Vec64& x, const Batch&) const override {
    check_x(x);
    return h_.apply(x) + b_;
  }
  Vec64 hvp(const Vec64& x, const Vec64& v, const Batch&) const override {
    check_x(x);
    return h_.apply(v);
  }

  const SymMat& hessian() const noexcept { return h_; }
  const Vec64& linear() const noexcept { return b_; }

 private:
  SymMat h_;
  Vec64 b_;
};

/// Random SPD matrix Q diag(λ) Qᵀ with eigenvalues log-spaced in
/// [lambda_min, lambda_min·condition].
inline SymMat random_spd(RngStream& rng, std::size_t d, double condition, double lambda_min = 1.0) {
  if (d == 0 || condition < 1.0) throw Error("random_spd: need d >= 1 and condition >= 1");
  // Gram-Schmidt on a Gaussian matrix gives a random orthonormal basis.
  std::vector<Vec64> q;
  while (q.size() < d) {
    Vec64 v = gaussian(rng, d);
    for (const auto& u : q) axpy(-dot(u, v), u, v);
    const double n = norm2(v);
    if (n < 1e-8) continue;
    v *= 1.0 / n;
    q.push_back(std::move(v));
  }
  Matrix m(d, d);
  for (std::size_t k = 0; k < d; ++k) {
    const double frac = d == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(d - 1);
    const double lam = lambda_min * std::pow(condition, frac);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) m(i, j) += lam * q[k][i] * q[k][j];
  }
  return SymMat::symmetrized(m);
}

// ---------------------------------------------------------------------------
// Gaussian mixture landscape
// ---------------------------------------------------------------------------

struct MixtureComponent {
  double weight = 1.0;
  std::array<double, 2> mean{0.0, 0.0};
  std::array<double, 3> cov{1.0, 0.0, 1.0};  // (σxx, σxy, σyy)
};

struct MixtureSpec {
  std::vector<MixtureComponent> components;
};

/// Two basins at (±2, 0): a sharp one (Σ = 0.05·I, weight 0.7) at +2 and a
/// flat one (Σ = I, weight 0.5) at −2.
inline MixtureSpec canonical_mixture() {
  return MixtureSpec{{
      {0.7, {2.0, 0.0}, {0.05, 0.0, 0.05}},
      {0.5, {-2.0, 0.0}, {1.0, 0.0, 1.0}},
  }};
}

/// f(x) = −Σ wᵢ N(x; μᵢ, Σᵢ) over ℝ².
class GaussianMixtureLandscape final : public Objective {
 public:
  explicit GaussianMixtureLandscape(MixtureSpec spec) : spec_(std::move(spec)) {
    if (spec_.components.size() < 2) throw Error("mixture: need at least two components");
    for (const auto& c : spec_.components) {
      if (!(c.weight > 0.0)) throw Error("mixture: component weights must be positive");
      const double det = c.cov[0] * c.cov[2] - c.cov[1] * c.cov[1];
      if (!(c.cov[0] > 0.0) || !(det > 1e-14))
        throw Error("mixture: covariance must be positive definite (det=" + std::to_string(det) +
                    ")");
      Prepared p;
      p.weight = c.weight;
      p.mean = c.mean;
      p.prec = {c.cov[2] / det, -c.cov[1] / det, c.cov[0] / det};
      p.norm = 1.0 / (2.0 * std::numbers::pi * std::sqrt(det));
      prepared_.push_back(p);
    }
  }

  /// Single-component density surface; bypasses the two-component rule for
  /// closed-form checks.
  static GaussianMixtureLandscape single(MixtureComponent c) {
    GaussianMixtureLandscape g(MixtureSpec{{c, c}});
    g.prepared_.resize(1);
    g.spec_.components.resize(1);
    return g;
  }

  std::size_t dim() const override { return 2; }
  double value(const Vec64& x, const Batch&) const override {
    check_x(x);
    double f = 0.0;
    for (const auto& c : prepared_) f -= c.weight * density(c, x);
    return f;
  }
  Vec64 grad(const Vec64& x, const Batch&) const override {
    check_x(x);
    Vec64 g(2);
    for (const auto& c : prepared_) {
      const auto r = whitened(c, x);
      const double s = c.weight * density(c, x);
      g[0] += s * r[0];
      g[1] += s * r[1];
    }
    return g;
  }
  Vec64 hvp(const Vec64& x, const Vec64& v, const Batch&) const override {
    return hessian(x).apply(v);
  }

  /// ∇²f = −Σ wᵢ Nᵢ (rᵢrᵢᵀ − Pᵢ) with rᵢ = Pᵢ(x − μᵢ).
  SymMat hessian(const Vec64& x) const {
    check_x(x);
    double hxx = 0.0, hxy = 0.0, hyy = 0.0;
    for (const auto& c : prepared_) {
      const auto r = whitened(c, x);
      const double s = c.weight * density(c, x);
      hxx -= s * (r[0] * r[0] - c.prec[0]);
      hxy -= s * (r[0] * r[1] - c.prec[1]);
      hyy -= s * (r[1] * r[1] - c.prec[2]);
    }
    return SymMat{{hxx, hxy}, {hxy, hyy}};
  }

  const MixtureSpec& spec() const noexcept { return spec_; }

  /// Index of the component mean nearest to x (Euclidean).
  std::size_t nearest_component(const Vec64& x) const {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < prepared_.size(); ++i) {
      const double dx = x[0] - prepared_[i].mean[0], dy = x[1] - prepared_[i].mean[1];
      const double d = dx * dx + dy * dy;
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    return best;
  }

 private:
  struct Prepared {
    double weight;
    std::array<double, 2> mean;
    std::array<double, 3> prec;  // Σ⁻¹ as (pxx, pxy, pyy)
    double norm;
  };

  static std::array<double, 2> whitened(const Prepared& c, const Vec64& x) {
    const double dx = x[0] - c.mean[0], dy = x[1] - c.mean[1];
    return {c.prec[0] * dx + c.prec[1] * dy, c.prec[1] * dx + c.prec[2] * dy};
  }
  static double density(const Prepared& c, const Vec64& x) {
    const double dx = x[0] - c.mean[0], dy = x[1] - c.mean[1];
    const double q = dx * (c.prec[0] * dx + c.prec[1] * dy) + dy * (c.prec[1] * dx + c.prec[2] * dy);
    return c.norm * std::exp(-0.5 * q);
  }

  MixtureSpec spec_;
  std::vector<Prepared> prepared_;
};

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

struct Dataset {
  Matrix features;                // n × p
  std::vector<int> labels;        // n entries in [0, num_classes)
  std::vector<bool> noise_mask;   // n entries; true marks a corrupted label
  int num_classes = 2;
  std::optional<Matrix> targets;  // n × C real targets for MSE; one-hot labels otherwise

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t num_features() const noexcept { return features.cols(); }

  void validate() const {
    if (labels.empty()) throw Error("dataset: no examples");
    if (features.rows() != labels.size()) throw Error("dataset: feature/label row mismatch");
    if (noise_mask.size() != labels.size()) throw Error("dataset: noise mask size mismatch");
    if (num_classes < 1) throw Error("dataset: need at least one class");
    for (int y : labels)
      if (y < 0 || y >= num_classes) throw Error("dataset: label out of range");
    if (targets && (targets->rows() != labels.size() ||
                    targets->cols() != static_cast<std::size_t>(num_classes)))
      throw Error("dataset: targets shape must be n × num_classes");
  }

  Dataset subset(const std::vector<std::size_t>& idx) const {
    Dataset out;
    out.features = Matrix(idx.size(), num_features());
    out.num_classes = num_classes;
    if (targets) out.targets = Matrix(idx.size(), static_cast<std::size_t>(num_classes));
    for (std::size_t r = 0; r < idx.size(); ++r) {
      for (std::size_t c = 0; c < num_features(); ++c) out.features(r, c) = features(idx[r], c);
      if (targets)
        for (std::size_t c = 0; c < targets->cols(); ++c) (*out.targets)(r, c) = (*targets)(idx[r], c);
      out.labels.push_back(labels[idx[r]]);
      out.noise_mask.push_back(noise_mask[idx[r]]);
    }
    return out;
  }
};

/// Parses "p floats + integer label" rows. A first line whose first field
/// is not numeric is treated as a header.
inline Dataset parse_csv(std::istream& in, const std::string& source = "<csv>") {
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::string line;
  std::size_t line_no = 0;
  std::size_t width = 0;
  auto fail = [&](const std::string& what) {
    throw Error(source + ": line " + std::to_string(line_no) + ": " + what);
  };
  auto parse_double = [](const std::string& s, double& out) {
    std::size_t pos = 0;
    try {
      out = std::stod(s, &pos);
    } catch (const std::exception&) {
      return false;
    }
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    return pos == s.size();
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (!line.empty() && line.back() == ',') fields.emplace_back();

    double probe = 0.0;
    if (rows.empty() && width == 0 && !parse_double(fields.front(), probe)) {
      width = fields.size();  // header fixes the expected width
      continue;
    }
    if (fields.size() < 2) fail("expected at least one feature and a label");
    if (width != 0 && fields.size() != width)
      fail("ragged row: expected " + std::to_string(width) + " fields, got " +
           std::to_string(fields.size()));
    width = fields.size();

    std::vector<double> row(fields.size() - 1);
    for (std::size_t i = 0; i + 1 < fields.size(); ++i)
      if (!parse_double(fields[i], row[i]) || !std::isfinite(row[i]))
        fail("non-numeric field " + std::to_string(i + 1) + " '" + fields[i] + "'");
    double lab = 0.0;
    if (!parse_double(fields.back(), lab) || lab != std::floor(lab) || lab < 0 || lab > 1e6)
      fail("label must be a non-negative integer, got '" + fields.back() + "'");
    rows.push_back(std::move(row));
    labels.push_back(static_cast<int>(lab));
  }
  if (rows.empty()) {
    line_no = std::max<std::size_t>(line_no, 1);
    fail("empty file: no data rows");
  }

  Dataset ds;
  ds.features = Matrix(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) ds.features(r, c) = rows[r][c];
  ds.labels = std::move(labels);
  ds.noise_mask.assign(ds.labels.size(), false);
  ds.num_classes = std::max(2, *std::max_element(ds.labels.begin(), ds.labels.end()) + 1);
  ds.validate();
  return ds;
}

inline Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("load_csv: cannot open '" + path + "'");
  return parse_csv(in, path);
}

/// Relabels exactly round(fraction·n) randomly chosen examples with a
/// uniformly chosen different class.
inline Dataset inject_label_noise(const Dataset& ds, double fraction, RngStream& rng) {
  if (!(fraction >= 0.0 && fraction <= 1.0))
    throw Error("inject_label_noise: fraction must lie in [0, 1]");
  if (ds.num_classes < 2) throw Error("inject_label_noise: need at least two classes");
  Dataset out = ds;
  const auto n = ds.size();
  const auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  const auto perm = rng.permutation(n);
  const auto c = static_cast<std::uint64_t>(ds.num_classes);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t i = perm[k];
    const auto shift = 1 + rng.uniform_index(c - 1);
    out.labels[i] = static_cast<int>((static_cast<std::uint64_t>(ds.labels[i]) + shift) % c);
    out.noise_mask[i] = true;
  }
  return out;
}

/// Random train/validation split; validation gets round(fraction·n) rows.
inline std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double val_fraction,
                                                 RngStream& rng) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    throw Error("split_dataset: validation fraction must lie in (0, 1)");
  const auto n = ds.size();
  const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n)));
  if (n_val == 0 || n_val >= n) throw Error("split_dataset: split leaves an empty side");
  auto perm = rng.permutation(n);
  std::vector<std::size_t> val(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(perm.begin() + static_cast<std::ptrdiff_t>(n_val), perm.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {ds.subset(train), ds.subset(val)};
}

/// Gaussian blobs: one random center of norm `separation` per class,
/// isotropic noise of std `noise`. Classes are assigned round-robin.
inline Dataset make_blobs(RngStream& rng, std::size_t n, std::size_t p, int classes,
                          double separation, double noise) {
  if (n == 0 || p == 0 || classes < 2) throw Error("make_blobs: invalid shape");
  std::vector<Vec64> centers;
  for (int c = 0; c < classes; ++c) centers.push_back(separation * unit_sphere_direction(rng, p));
  Dataset ds;
  ds.features = Matrix(n, p);
  ds.num_classes = classes;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % static_cast<std::size_t>(classes));
    for (std::size_t j = 0; j < p; ++j) ds.features(i, j) = centers[y][j] + noise * rng.normal();
    ds.labels.push_back(y);
  }
  ds.noise_mask.assign(n, false);
  return ds;
}

/// Logistic-teacher binary data: x ~ N(0, I), y ~ Bernoulli(σ(scale·wᵀx))
/// with a random unit teacher w.
inline Dataset make_logistic_teacher(RngStream& rng, std::size_t n, std::size_t p, double scale) {
  const Vec64 w = unit_sphere_direction(rng, p);
  Dataset ds;
  ds.features = Matrix(n, p);
  ds.num_classes = 2;
  for (std::size_t i = 0; i < n; ++i) {
    double z = 0.0;
    for (std::size_t j = 0; j < p; ++j) {
      ds.features(i, j) = rng.normal();
      z += w[j] * ds.features(i, j);
    }
    const double prob = 1.0 / (1.0 + std::exp(-scale * z));
    ds.labels.push_back(rng.uniform() < prob ? 1 : 0);
  }
  ds.noise_mask.assign(n, false);
  return ds;
}

// ---------------------------------------------------------------------------
// Logistic regression
// ---------------------------------------------------------------------------

/// Mean logistic loss over the batch + (l2/2)‖x‖², no intercept.
class LogisticRegression final : public Objective {
 public:
  LogisticRegression(Dataset ds, double l2) : ds_(std::move(ds)), l2_(l2) {
    ds_.validate();
    for (int y : ds_.labels)
      if (y != 0 && y != 1) throw Error("logistic_regression: labels must be binary (0/1)");
    if (l2_ < 0.0) throw Error("logistic_regression: l2 must be non-negative");
  }

  std::size_t dim() const override { return ds_.num_features(); }
  std::size_t num_examples() const override { return ds_.size(); }

  double value(const Vec64& x, const Batch& batch) const override {
    check_x(x);
    double s = 0.0;
    for (std::size_t i : batch) {
      const double m = (ds_.labels[i] == 1 ? 1.0 : -1.0) * margin(x, i);
      s += softplus(-m);
    }
    return s / static_cast<double>(batch.size()) + 0.5 * l2_ * dot(x, x);
  }

  Vec64 grad(const Vec64& x, const Batch& batch) const override {
    check_x(x);
    Vec64 g = l2_ * x;
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (std::size_t i : batch) {
      const double r = (sigmoid(margin(x, i)) - ds_.labels[i]) * inv;
      auto row = ds_.features.row(i);
      for (std::size_t j = 0; j < row.size(); ++j) g[j] += r * row[j];
    }
    return g;
  }

  Vec64 hvp(const Vec64& x, const Vec64& v, const Batch& batch) const override {
    check_x(x);
    Vec64 out = l2_ * v;
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (std::size_t i : batch) {
      const double s = sigmoid(margin(x, i));
      auto row = ds_.features.row(i);
      double av = 0.0;
      for (std::size_t j = 0; j < row.size(); ++j) av += row[j] * v[j];
      const double w = s * (1.0 - s) * av * inv;
      for (std::size_t j = 0; j < row.size(); ++j) out[j] += w * row[j];
    }
    return out;
  }

  /// Accuracy of sign(aᵀx) against labels of `ds`.
  double accuracy(const Vec64& x, const Dataset& ds) const {
    std::size_t ok = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      double z = 0.0;
      auto row = ds.features.row(i);
      for (std::size_t j = 0; j < row.size(); ++j) z += row[j] * x[j];
      ok += ((z > 0.0 ? 1 : 0) == ds.labels[i]) ? 1 : 0;
    }
    return static_cast<double>(ok) / static_cast<double>(ds.size());
  }

  const Dataset& dataset() const noexcept { return ds_; }

 private:
  double margin(const Vec64& x, std::size_t i) const {
    auto row = ds_.features.row(i);
    double z = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) z += row[j] * x[j];
    return z;
  }
  static double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
  }
  static double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

  Dataset ds_;
  double l2_;
};

// ---------------------------------------------------------------------------
// One-hidden-layer MLP on the autodiff tape
// ---------------------------------------------------------------------------

enum class Activation { kTanh, kRelu };
enum class Loss { kMse, kCrossEntropy };

/// out = W₂·act(W₁a + b₁) + b₂. Parameter layout: W₁ (hidden×p, row-major),
/// b₁, W₂ (C×hidden), b₂. Cross-entropy uses softmax over the C outputs;
/// MSE is ½‖out − target‖² with one-hot or explicit targets.
class MlpObjective final : public Objective {
 public:
  static constexpr std::size_t kMaxDim = 5000;

  MlpObjective(Dataset ds, std::size_t hidden, Activation act, Loss loss)
      : ds_(std::move(ds)), hidden_(hidden), act_(act), loss_(loss) {
    ds_.validate();
    if (hidden_ == 0) throw Error("mlp: hidden width must be >= 1");
    p_ = ds_.num_features();
    c_ = static_cast<std::size_t>(ds_.num_classes);
    dim_ = p_ * hidden_ + hidden_ + hidden_ * c_ + c_;
    if (dim_ > kMaxDim)
      throw Error("mlp: parameter count " + std::to_string(dim_) + " exceeds desk-scale limit " +
                  std::to_string(kMaxDim));
    build_tape();
    inputs_.resize(ds_.size() * (p_ + c_));
    for (std::size_t i = 0; i < ds_.size(); ++i) {
      double* u = inputs_.data() + i * (p_ + c_);
      for (std::size_t j = 0; j < p_; ++j) u[j] = ds_.features(i, j);
      for (std::size_t k = 0; k < c_; ++k)
        u[p_ + k] = ds_.targets ? (*ds_.targets)(i, k)
                                : (static_cast<std::size_t>(ds_.labels[i]) == k ? 1.0 : 0.0);
    }
  }

  std::size_t dim() const override { return dim_; }
  std::size_t num_examples() const override { return ds_.size(); }

  double value(const Vec64& x, const Batch& batch) const override {
    check_x(x);
    ad::Workspace ws;
    double s = 0.0;
    for (std::size_t i : batch) s += ad::eval(tape_, x.span(), example(i), ws).value;
    return s / static_cast<double>(batch.size());
  }

  Vec64 grad(const Vec64& x, const Batch& batch) const override {
    check_x(x);
    ad::Workspace ws;
    Vec64 g(dim_);
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (std::size_t i : batch) ad::accumulate_grad(tape_, x.span(), example(i), inv, g, ws);
    return g;
  }

  Vec64 hvp(const Vec64& x, const Vec64& v, const Batch& batch) const override {
    check_x(x);
    ad::Workspace ws;
    Vec64 out(dim_);
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (std::size_t i : batch)
      ad::accumulate_hvp(tape_, x.span(), v.span(), example(i), inv, out, nullptr, ws);
    return out;
  }

  /// Network outputs for one feature row.
  std::vector<double> forward(const Vec64& x, std::span<const double> a) const {
    std::vector<double> h(hidden_), out(c_);
    for (std::size_t j = 0; j < hidden_; ++j) {
      double z = 0.0;
      for (std::size_t k = 0; k < p_; ++k) z += x[w1(j, k)] * a[k];
      z += x[b1(j)];
      h[j] = act_ == Activation::kTanh ? std::tanh(z) : std::max(z, 0.0);
    }
    for (std::size_t c = 0; c < c_; ++c) {
      double z = x[b2(c)];
      for (std::size_t j = 0; j < hidden_; ++j) z += x[w2(c, j)] * h[j];
      out[c] = z;
    }
    return out;
  }

  double accuracy(const Vec64& x, const Dataset& ds) const {
    std::size_t ok = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const auto out = forward(x, ds.features.row(i));
      const auto arg = static_cast<int>(std::max_element(out.begin(), out.end()) - out.begin());
      ok += arg == ds.labels[i] ? 1 : 0;
    }
    return static_cast<double>(ok) / static_cast<double>(ds.size());
  }

  /// Glorot-uniform weights, zero biases.
  Vec64 initial_point(RngStream& rng) const {
    Vec64 x(dim_);
    const double a1 = std::sqrt(6.0 / static_cast<double>(p_ + hidden_));
    const double a2 = std::sqrt(6.0 / static_cast<double>(hidden_ + c_));
    for (std::size_t j = 0; j < hidden_; ++j)
      for (std::size_t k = 0; k < p_; ++k) x[w1(j, k)] = a1 * (2.0 * rng.uniform() - 1.0);
    for (std::size_t c = 0; c < c_; ++c)
      for (std::size_t j = 0; j < hidden_; ++j) x[w2(c, j)] = a2 * (2.0 * rng.uniform() - 1.0);
    return x;
  }

  const Dataset& dataset() const noexcept { return ds_; }
  const ad::Tape& tape() const noexcept { return tape_; }

 private:
  std::size_t w1(std::size_t j, std::size_t k) const { return j * p_ + k; }
  std::size_t b1(std::size_t j) const { return hidden_ * p_ + j; }
  std::size_t w2(std::size_t c, std::size_t j) const { return hidden_ * p_ + hidden_ + c * hidden_ + j; }
  std::size_t b2(std::size_t c) const { return hidden_ * p_ + hidden_ + c_ * hidden_ + c; }

  std::span<const double> example(std::size_t i) const {
    return {inputs_.data() + i * (p_ + c_), p_ + c_};
  }

  void build_tape() {
    ad::TapeBuilder tb(dim_, p_ + c_);
    std::vector<ad::Var> a(p_), hidden(hidden_), out(c_), target(c_);
    for (std::size_t k = 0; k < p_; ++k) a[k] = tb.input(k);
    for (std::size_t c = 0; c < c_; ++c) target[c] = tb.input(p_ + c);
    std::vector<ad::Var> row;
    for (std::size_t j = 0; j < hidden_; ++j) {
      row.clear();
      for (std::size_t k = 0; k < p_; ++k) row.push_back(tb.param(w1(j, k)));
      const ad::Var z = ad::dot(row, a) + tb.param(b1(j));
      hidden[j] = act_ == Activation::kTanh ? ad::tanh(z) : ad::relu(z);
    }
    for (std::size_t c = 0; c < c_; ++c) {
      row.clear();
      for (std::size_t j = 0; j < hidden_; ++j) row.push_back(tb.param(w2(c, j)));
      out[c] = ad::dot(row, hidden) + tb.param(b2(c));
    }
    ad::Var loss;
    if (loss_ == Loss::kCrossEntropy) {
      std::vector<ad::Var> e(c_);
      for (std::size_t c = 0; c < c_; ++c) e[c] = ad::exp(out[c]);
      loss = ad::log(ad::sum(e)) - ad::dot(target, out);
    } else {
      std::vector<ad::Var> sq(c_);
      for (std::size_t c = 0; c < c_; ++c) sq[c] = ad::pow(out[c] - target[c], 2.0);
      loss = 0.5 * ad::sum(sq);
    }
    tape_ = tb.finish(loss);
  }

  Dataset ds_;
  std::size_t hidden_;
  Activation act_;
  Loss loss_;
  std::size_t p_ = 0, c_ = 0, dim_ = 0;
  ad::Tape tape_;
  std::vector<double> inputs_;
};

}  // namespace sassha
