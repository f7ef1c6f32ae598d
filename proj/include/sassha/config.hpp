#pragma once
// Line-oriented key=value configuration with dotted section keys.
//
//   # comment
//   problem.kind = quadratic
//   optimizer.method = sassha
//   optimizer.rho = 0.05
//   run.steps = 100
//   run.seeds = 1,2,3
//
// Every accepted key is listed in config_keys() below; anything else is
// rejected with its line number.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sassha/numkit.hpp"
#include "sassha/objectives.hpp"
#include "sassha/optimizers.hpp"
#include "sassha/sharpness.hpp"

namespace sassha {

enum class ValueType { kInt, kDouble, kString, kBool, kDoubleList, kIntList };

struct KeySpec {
  std::string key;
  ValueType type;
  std::string fallback;  // empty: no default
  std::string help;
};

inline const std::vector<KeySpec>& config_keys() {
  using V = ValueType;
  static const std::vector<KeySpec> keys = {
      {"problem.kind", V::kString, "", "quadratic | mixture | logistic | mlp"},
      {"problem.dim", V::kInt, "20", "quadratic dimension"},
      {"problem.condition", V::kDouble, "100", "quadratic condition number"},
      {"problem.lambda_min", V::kDouble, "1", "quadratic smallest eigenvalue"},
      {"problem.linear", V::kBool, "false", "quadratic: add a random linear term"},
      {"problem.init_scale", V::kDouble, "1", "std of the Gaussian initial point (quadratic, logistic)"},
      {"problem.x0", V::kDoubleList, "", "explicit initial point"},
      {"problem.data", V::kString, "blobs", "blobs | teacher | csv"},
      {"problem.data_path", V::kString, "", "CSV path for problem.data=csv"},
      {"problem.data_seed", V::kInt, "", "fixes the dataset across run seeds"},
      {"problem.n", V::kInt, "1000", "generated examples"},
      {"problem.features", V::kInt, "20", "generated feature count"},
      {"problem.classes", V::kInt, "2", "blob classes"},
      {"problem.separation", V::kDouble, "2", "blob center norm"},
      {"problem.noise", V::kDouble, "1", "blob noise std"},
      {"problem.teacher_scale", V::kDouble, "2", "logistic teacher logit scale"},
      {"problem.l2", V::kDouble, "0", "logistic L2 coefficient"},
      {"problem.hidden", V::kInt, "32", "MLP hidden width"},
      {"problem.activation", V::kString, "tanh", "tanh | relu"},
      {"problem.loss", V::kString, "ce", "ce | mse"},
      {"problem.label_noise", V::kDouble, "0", "fraction of training labels corrupted"},
      {"problem.val_fraction", V::kDouble, "0.2", "held-out fraction (0 = none)"},
      {"problem.batch_size", V::kInt, "0", "minibatch size (0 = full batch)"},
      {"optimizer.method", V::kString, "", "sassha | msassha | sam_sgdm | sam_adamw | adahessian | sophiah | adamw | sgdm"},
      {"optimizer.lr", V::kDouble, "0.1", "base step size"},
      {"optimizer.lr_schedule", V::kString, "constant", "constant | multistep | cosine_warmup | polynomial | power_decay"},
      {"optimizer.lr_milestones", V::kDoubleList, "", "multistep milestones (steps)"},
      {"optimizer.lr_gamma", V::kDouble, "0.1", "multistep factor"},
      {"optimizer.lr_warmup", V::kInt, "0", "cosine warmup steps"},
      {"optimizer.lr_power", V::kDouble, "1", "polynomial / power-decay exponent"},
      {"optimizer.rho", V::kDouble, "", "perturbation radius (required for sassha, msassha, sam_*)"},
      {"optimizer.rho_schedule", V::kString, "constant", "schedule kind for rho"},
      {"optimizer.rho_milestones", V::kDoubleList, "", ""},
      {"optimizer.rho_gamma", V::kDouble, "0.1", ""},
      {"optimizer.rho_warmup", V::kInt, "0", ""},
      {"optimizer.rho_power", V::kDouble, "1", ""},
      {"optimizer.beta1", V::kDouble, "0.9", ""},
      {"optimizer.beta2", V::kDouble, "0.999", ""},
      {"optimizer.k", V::kInt, "10", "Hessian refresh interval (sophiah: 1)"},
      {"optimizer.weight_decay", V::kDouble, "0", "decoupled weight decay"},
      {"optimizer.eps", V::kDouble, "1e-8", ""},
      {"optimizer.n_hutch", V::kInt, "1", "Hutchinson probes per refresh"},
      {"optimizer.clip", V::kDouble, "0.01", "Sophia-H clip threshold"},
      {"optimizer.hess_floor", V::kDouble, "0.01", "Sophia-H Hessian floor"},
      {"optimizer.momentum", V::kDouble, "0.9", "SGD heavy-ball coefficient"},
      {"run.steps", V::kInt, "", "total steps (or give run.epochs)"},
      {"run.epochs", V::kInt, "", "total epochs"},
      {"run.seeds", V::kIntList, "", "seed list"},
      {"run.eval_every", V::kInt, "0", "validation cadence in steps (0 = end only)"},
      {"metrics.per_step_loss", V::kBool, "true", "full-batch train loss and gradient norm per step"},
      {"metrics.sharpness", V::kBool, "false", "sharpness report at the final point"},
      {"metrics.sharpness_rho", V::kDouble, "0.1", ""},
      {"metrics.n_mc", V::kInt, "100", ""},
      {"metrics.n_trace", V::kInt, "100", ""},
      {"metrics.sensitivity", V::kBool, "false", "Hessian sensitivity at the trajectory midpoint"},
      {"metrics.sensitivity_rho", V::kDouble, "0.1", ""},
      {"metrics.sensitivity_dirs", V::kInt, "10", ""},
      {"metrics.sensitivity_probes", V::kInt, "10", ""},
      {"output.dir", V::kString, "runs", "run directory"},
      {"output.checkpoint", V::kBool, "true", "write the final parameter vector"},
      {"toy.grid", V::kInt, "10", "initializations per axis"},
      {"toy.x_range", V::kDoubleList, "-4,4", ""},
      {"toy.y_range", V::kDoubleList, "-3,3", ""},
      {"ensemble.kind", V::kString, "explicit", "explicit | random_commuting"},
      {"ensemble.mats", V::kString, "", "explicit matrices: rows split by ';', matrices by '|'"},
      {"ensemble.probs", V::kDoubleList, "", "explicit probabilities (default uniform)"},
      {"ensemble.dim", V::kInt, "4", "random_commuting dimension"},
      {"ensemble.members", V::kInt, "4", ""},
      {"ensemble.lo", V::kDouble, "0.1", ""},
      {"ensemble.hi", V::kDouble, "2", ""},
      {"ensemble.spread", V::kDouble, "0.3", ""},
      {"ensemble.seed", V::kInt, "0", ""},
      {"stability.eta", V::kDouble, "", ""},
      {"stability.rho", V::kDouble, "", ""},
      {"stability.eps", V::kDouble, "", ""},
      {"stability.steps", V::kInt, "200", "simulation horizon (0 = no simulation)"},
      {"stability.n_traj", V::kInt, "200", ""},
      {"stability.x0", V::kDoubleList, "", "initial point (default: all ones)"},
  };
  return keys;
}

inline const KeySpec* find_key(std::string_view key) {
  for (const auto& k : config_keys())
    if (k.key == key) return &k;
  return nullptr;
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::optional<double> to_double(std::string_view s) {
  const std::string t = trim(s);
  if (t.empty()) return std::nullopt;
  double v = 0.0;
  const auto* end = t.data() + t.size();
  auto [p, ec] = std::from_chars(t.data(), end, v);
  if (ec != std::errc() || p != end) return std::nullopt;
  return v;
}

inline std::optional<long long> to_int(std::string_view s) {
  const std::string t = trim(s);
  if (t.empty()) return std::nullopt;
  long long v = 0;
  const auto* end = t.data() + t.size();
  auto [p, ec] = std::from_chars(t.data(), end, v);
  if (ec != std::errc() || p != end) return std::nullopt;
  return v;
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline bool type_ok(ValueType t, const std::string& v) {
  switch (t) {
    case ValueType::kInt: return to_int(v).has_value();
    case ValueType::kDouble: return to_double(v).has_value();
    case ValueType::kString: return !v.empty();
    case ValueType::kBool: return v == "true" || v == "false" || v == "1" || v == "0";
    case ValueType::kDoubleList:
      for (const auto& p : split(v, ','))
        if (!to_double(p)) return false;
      return true;
    case ValueType::kIntList:
      for (const auto& p : split(v, ','))
        if (!to_int(p)) return false;
      return true;
  }
  return false;
}

inline const char* type_name(ValueType t) {
  switch (t) {
    case ValueType::kInt: return "integer";
    case ValueType::kDouble: return "number";
    case ValueType::kString: return "non-empty string";
    case ValueType::kBool: return "boolean";
    case ValueType::kDoubleList: return "comma-separated numbers";
    case ValueType::kIntList: return "comma-separated integers";
  }
  return "?";
}

}  // namespace detail

/// Parsed, type-checked key/value pairs with defaults available on lookup.
class ConfigFile {
 public:
  struct Entry {
    std::string value;
    int line = 0;
  };

  static ConfigFile parse(std::istream& in, const std::string& source = "<config>") {
    ConfigFile cfg;
    cfg.source_ = source;
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
      ++line_no;
      const auto hash = raw.find('#');
      const std::string line = detail::trim(std::string_view(raw).substr(0, hash));
      if (line.empty()) continue;
      const auto eq = line.find('=');
      auto where = [&] { return source + ":" + std::to_string(line_no) + ": "; };
      if (eq == std::string::npos) throw Error(where() + "expected key = value");
      const std::string key = detail::trim(std::string_view(line).substr(0, eq));
      const std::string value = detail::trim(std::string_view(line).substr(eq + 1));
      const KeySpec* spec = find_key(key);
      if (!spec) throw Error(where() + "unknown key '" + key + "'");
      if (cfg.entries_.count(key))
        throw Error(where() + "duplicate key '" + key + "' (first set on line " +
                    std::to_string(cfg.entries_[key].line) + ")");
      if (!detail::type_ok(spec->type, value))
        throw Error(where() + "key '" + key + "' expects " + detail::type_name(spec->type) +
                    ", got '" + value + "'");
      cfg.entries_[key] = {value, line_no};
    }
    return cfg;
  }

  static ConfigFile parse_string(const std::string& text, const std::string& source = "<string>") {
    std::istringstream in(text);
    return parse(in, source);
  }

  static ConfigFile load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("config: cannot open '" + path + "'");
    return parse(in, path);
  }

  bool has(const std::string& key) const { return entries_.count(key) > 0; }
  const std::string& source() const noexcept { return source_; }
  const std::map<std::string, Entry>& entries() const noexcept { return entries_; }

  /// Explicitly overrides a value (used by --seed-override).
  void set(const std::string& key, const std::string& value) {
    const KeySpec* spec = find_key(key);
    if (!spec) throw Error("config: unknown key '" + key + "'");
    if (!detail::type_ok(spec->type, value))
      throw Error("config: key '" + key + "' expects " + detail::type_name(spec->type));
    entries_[key] = {value, 0};
  }

  /// Raw value, falling back to the registered default; throws when neither exists.
  std::string raw(const std::string& key) const {
    if (auto it = entries_.find(key); it != entries_.end()) return it->second.value;
    const KeySpec* spec = find_key(key);
    if (!spec) throw Error("config: unregistered key '" + key + "'");
    if (spec->fallback.empty()) throw Error(source_ + ": missing required key '" + key + "'");
    return spec->fallback;
  }

  std::string str(const std::string& key) const { return raw(key); }
  double num(const std::string& key) const { return *detail::to_double(raw(key)); }
  long long integer(const std::string& key) const { return *detail::to_int(raw(key)); }
  bool flag(const std::string& key) const {
    const auto v = raw(key);
    return v == "true" || v == "1";
  }
  std::vector<double> doubles(const std::string& key) const {
    std::vector<double> out;
    const auto v = raw(key);
    for (const auto& p : detail::split(v, ',')) out.push_back(*detail::to_double(p));
    return out;
  }
  std::vector<long long> integers(const std::string& key) const {
    std::vector<long long> out;
    for (const auto& p : detail::split(raw(key), ',')) out.push_back(*detail::to_int(p));
    return out;
  }

  /// "file:line: " prefix for diagnostics about a present key.
  std::string at(const std::string& key) const {
    if (auto it = entries_.find(key); it != entries_.end() && it->second.line > 0)
      return source_ + ":" + std::to_string(it->second.line) + ": ";
    return source_ + ": ";
  }

 private:
  std::string source_;
  std::map<std::string, Entry> entries_;
};

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

enum class ProblemKind { kQuadratic, kMixture, kLogistic, kMlp };
enum class DataKind { kBlobs, kTeacher, kCsv };

struct ProblemConfig {
  ProblemKind kind = ProblemKind::kQuadratic;
  std::size_t dim = 20;
  double condition = 100.0;
  double lambda_min = 1.0;
  bool linear = false;
  double init_scale = 1.0;
  std::vector<double> x0;
  DataKind data = DataKind::kBlobs;
  std::string data_path;
  std::optional<std::uint64_t> data_seed;
  std::size_t n = 1000;
  std::size_t features = 20;
  int classes = 2;
  double separation = 2.0;
  double noise = 1.0;
  double teacher_scale = 2.0;
  double l2 = 0.0;
  std::size_t hidden = 32;
  Activation activation = Activation::kTanh;
  Loss loss = Loss::kCrossEntropy;
  double label_noise = 0.0;
  double val_fraction = 0.2;
  std::size_t batch_size = 0;
  MixtureSpec mixture = canonical_mixture();
};

struct RunConfig {
  long steps = 0;            // resolved from epochs when only epochs were given
  std::optional<long> epochs;
  std::vector<std::uint64_t> seeds;
  long eval_every = 0;
};

struct MetricConfig {
  bool per_step_loss = true;
  bool sharpness = false;
  SharpnessOptions sharpness_opts;
  bool sensitivity = false;
  double sensitivity_rho = 0.1;
  int sensitivity_dirs = 10;
  int sensitivity_probes = 10;
};

struct ToyConfig {
  int grid = 10;
  double x_lo = -4.0, x_hi = 4.0;
  double y_lo = -3.0, y_hi = 3.0;
};

struct ExperimentConfig {
  ProblemConfig problem;
  OptimizerConfig optimizer;
  RunConfig run;
  MetricConfig metrics;
  ToyConfig toy;
  std::string output_dir = "runs";
  bool checkpoint = true;
  /// Resolved key=value lines, for the manifest.
  std::map<std::string, std::string> resolved;
};

namespace detail {

inline Schedule schedule_from(const ConfigFile& f, const std::string& prefix, double base) {
  const std::string kind_key = "optimizer." + prefix + "_schedule";
  const auto kind = parse_schedule_kind(f.str(kind_key));
  if (!kind) throw Error(f.at(kind_key) + "unknown schedule '" + f.str(kind_key) + "'");
  Schedule s;
  s.kind = *kind;
  s.base = base;
  if (f.has("optimizer." + prefix + "_milestones"))
    s.milestones = f.doubles("optimizer." + prefix + "_milestones");
  s.gamma = f.num("optimizer." + prefix + "_gamma");
  s.warmup = static_cast<long>(f.integer("optimizer." + prefix + "_warmup"));
  s.power = f.num("optimizer." + prefix + "_power");
  try {
    s.validate(prefix);
  } catch (const Error& e) {
    throw Error(f.at(kind_key) + e.what());
  }
  return s;
}

template <class T>
T checked(const ConfigFile& f, const std::string& key, T v, bool ok, const std::string& rule) {
  if (!ok) throw Error(f.at(key) + "key '" + key + "' " + rule);
  return v;
}

}  // namespace detail

inline ProblemConfig problem_from(const ConfigFile& f) {
  using detail::checked;
  ProblemConfig p;
  const std::string kind = f.str("problem.kind");
  if (kind == "quadratic") p.kind = ProblemKind::kQuadratic;
  else if (kind == "mixture") p.kind = ProblemKind::kMixture;
  else if (kind == "logistic") p.kind = ProblemKind::kLogistic;
  else if (kind == "mlp") p.kind = ProblemKind::kMlp;
  else throw Error(f.at("problem.kind") + "unknown problem.kind '" + kind + "'");

  const auto dim = f.integer("problem.dim");
  p.dim = checked(f, "problem.dim", static_cast<std::size_t>(std::max(0LL, dim)), dim >= 1, "must be >= 1");
  p.condition = checked(f, "problem.condition", f.num("problem.condition"),
                        f.num("problem.condition") >= 1.0, "must be >= 1");
  p.lambda_min = checked(f, "problem.lambda_min", f.num("problem.lambda_min"),
                         f.num("problem.lambda_min") > 0.0, "must be > 0");
  p.linear = f.flag("problem.linear");
  p.init_scale = checked(f, "problem.init_scale", f.num("problem.init_scale"),
                         f.num("problem.init_scale") >= 0.0, "must be >= 0");
  if (f.has("problem.x0")) p.x0 = f.doubles("problem.x0");

  const std::string data = f.str("problem.data");
  if (data == "blobs") p.data = DataKind::kBlobs;
  else if (data == "teacher") p.data = DataKind::kTeacher;
  else if (data == "csv") p.data = DataKind::kCsv;
  else throw Error(f.at("problem.data") + "unknown problem.data '" + data + "'");
  if (p.data == DataKind::kCsv && (p.kind == ProblemKind::kLogistic || p.kind == ProblemKind::kMlp)) {
    p.data_path = f.str("problem.data_path");
    if (!std::filesystem::exists(p.data_path))
      throw Error(f.at("problem.data_path") + "file '" + p.data_path + "' does not exist");
  }
  if (f.has("problem.data_seed"))
    p.data_seed = static_cast<std::uint64_t>(f.integer("problem.data_seed"));
  const auto n = f.integer("problem.n");
  p.n = checked(f, "problem.n", static_cast<std::size_t>(std::max(0LL, n)), n >= 2, "must be >= 2");
  const auto feat = f.integer("problem.features");
  p.features = checked(f, "problem.features", static_cast<std::size_t>(std::max(0LL, feat)),
                       feat >= 1, "must be >= 1");
  p.classes = checked(f, "problem.classes", static_cast<int>(f.integer("problem.classes")),
                      f.integer("problem.classes") >= 2, "must be >= 2");
  p.separation = f.num("problem.separation");
  p.noise = checked(f, "problem.noise", f.num("problem.noise"), f.num("problem.noise") >= 0.0,
                    "must be >= 0");
  p.teacher_scale = f.num("problem.teacher_scale");
  p.l2 = checked(f, "problem.l2", f.num("problem.l2"), f.num("problem.l2") >= 0.0, "must be >= 0");
  const auto hidden = f.integer("problem.hidden");
  p.hidden = checked(f, "problem.hidden", static_cast<std::size_t>(std::max(0LL, hidden)),
                     hidden >= 1, "must be >= 1");
  const std::string act = f.str("problem.activation");
  if (act == "tanh") p.activation = Activation::kTanh;
  else if (act == "relu") p.activation = Activation::kRelu;
  else throw Error(f.at("problem.activation") + "unknown activation '" + act + "'");
  const std::string loss = f.str("problem.loss");
  if (loss == "ce") p.loss = Loss::kCrossEntropy;
  else if (loss == "mse") p.loss = Loss::kMse;
  else throw Error(f.at("problem.loss") + "unknown loss '" + loss + "'");
  const double ln = f.num("problem.label_noise");
  p.label_noise = checked(f, "problem.label_noise", ln, ln >= 0.0 && ln <= 1.0, "must lie in [0, 1]");
  const double vf = f.num("problem.val_fraction");
  p.val_fraction = checked(f, "problem.val_fraction", vf, vf >= 0.0 && vf < 1.0, "must lie in [0, 1)");
  const auto bs = f.integer("problem.batch_size");
  p.batch_size = checked(f, "problem.batch_size", static_cast<std::size_t>(std::max(0LL, bs)),
                         bs >= 0, "must be >= 0");
  return p;
}

inline OptimizerConfig optimizer_from(const ConfigFile& f) {
  using detail::checked;
  OptimizerConfig c;
  const auto m = parse_method(f.str("optimizer.method"));
  if (!m) throw Error(f.at("optimizer.method") + "unknown optimizer.method '" + f.str("optimizer.method") + "'");
  c.method = *m;
  c.lr = detail::schedule_from(f, "lr", f.num("optimizer.lr"));
  if (uses_radius(c.method) && !f.has("optimizer.rho"))
    throw Error(f.source() + ": missing required key 'optimizer.rho' for method " +
                std::string(to_string(c.method)));
  c.rho = detail::schedule_from(f, "rho", f.has("optimizer.rho") ? f.num("optimizer.rho") : 0.0);
  c.beta1 = checked(f, "optimizer.beta1", f.num("optimizer.beta1"),
                    f.num("optimizer.beta1") >= 0.0 && f.num("optimizer.beta1") < 1.0, "must lie in [0, 1)");
  c.beta2 = checked(f, "optimizer.beta2", f.num("optimizer.beta2"),
                    f.num("optimizer.beta2") >= 0.0 && f.num("optimizer.beta2") < 1.0, "must lie in [0, 1)");
  // Sophia-H refreshes every step unless told otherwise.
  if (c.method == Method::kSophiaH && !f.has("optimizer.k"))
    c.k = 1;
  else
    c.k = checked(f, "optimizer.k", static_cast<int>(f.integer("optimizer.k")),
                  f.integer("optimizer.k") >= 1, "must be >= 1");
  c.weight_decay = checked(f, "optimizer.weight_decay", f.num("optimizer.weight_decay"),
                           f.num("optimizer.weight_decay") >= 0.0, "must be >= 0");
  c.eps = checked(f, "optimizer.eps", f.num("optimizer.eps"), f.num("optimizer.eps") > 0.0, "must be > 0");
  c.n_hutch = checked(f, "optimizer.n_hutch", static_cast<int>(f.integer("optimizer.n_hutch")),
                      f.integer("optimizer.n_hutch") >= 1, "must be >= 1");
  c.clip = checked(f, "optimizer.clip", f.num("optimizer.clip"), f.num("optimizer.clip") > 0.0, "must be > 0");
  c.hess_floor = checked(f, "optimizer.hess_floor", f.num("optimizer.hess_floor"),
                         f.num("optimizer.hess_floor") > 0.0, "must be > 0");
  c.momentum = checked(f, "optimizer.momentum", f.num("optimizer.momentum"),
                       f.num("optimizer.momentum") >= 0.0 && f.num("optimizer.momentum") < 1.0,
                       "must lie in [0, 1)");
  return c;
}

/// Full training configuration; requires problem.kind, optimizer.method,
/// run.seeds and one of run.steps / run.epochs.
inline ExperimentConfig experiment_from(const ConfigFile& f) {
  using detail::checked;
  ExperimentConfig e;
  e.problem = problem_from(f);
  e.optimizer = optimizer_from(f);

  if (f.has("run.steps") && f.has("run.epochs"))
    throw Error(f.at("run.epochs") + "give only one of run.steps and run.epochs");
  if (f.has("run.epochs")) {
    e.run.epochs = checked(f, "run.epochs", static_cast<long>(f.integer("run.epochs")),
                           f.integer("run.epochs") >= 1, "must be >= 1");
  } else {
    if (!f.has("run.steps")) throw Error(f.source() + ": missing required key 'run.steps'");
    e.run.steps = checked(f, "run.steps", static_cast<long>(f.integer("run.steps")),
                          f.integer("run.steps") >= 1, "must be >= 1");
  }
  for (long long s : f.integers("run.seeds")) {
    if (s < 0) throw Error(f.at("run.seeds") + "seeds must be non-negative");
    e.run.seeds.push_back(static_cast<std::uint64_t>(s));
  }
  e.run.eval_every = checked(f, "run.eval_every", static_cast<long>(f.integer("run.eval_every")),
                             f.integer("run.eval_every") >= 0, "must be >= 0");

  auto& m = e.metrics;
  m.per_step_loss = f.flag("metrics.per_step_loss");
  m.sharpness = f.flag("metrics.sharpness");
  m.sharpness_opts.rho = checked(f, "metrics.sharpness_rho", f.num("metrics.sharpness_rho"),
                                 f.num("metrics.sharpness_rho") > 0.0, "must be > 0");
  m.sharpness_opts.n_mc = checked(f, "metrics.n_mc", static_cast<int>(f.integer("metrics.n_mc")),
                                  f.integer("metrics.n_mc") >= 1, "must be >= 1");
  m.sharpness_opts.n_trace = checked(f, "metrics.n_trace", static_cast<int>(f.integer("metrics.n_trace")),
                                     f.integer("metrics.n_trace") >= 1, "must be >= 1");
  m.sensitivity = f.flag("metrics.sensitivity");
  m.sensitivity_rho = checked(f, "metrics.sensitivity_rho", f.num("metrics.sensitivity_rho"),
                              f.num("metrics.sensitivity_rho") > 0.0, "must be > 0");
  m.sensitivity_dirs = checked(f, "metrics.sensitivity_dirs", static_cast<int>(f.integer("metrics.sensitivity_dirs")),
                               f.integer("metrics.sensitivity_dirs") >= 1, "must be >= 1");
  m.sensitivity_probes = checked(f, "metrics.sensitivity_probes",
                                 static_cast<int>(f.integer("metrics.sensitivity_probes")),
                                 f.integer("metrics.sensitivity_probes") >= 1, "must be >= 1");

  e.toy.grid = checked(f, "toy.grid", static_cast<int>(f.integer("toy.grid")), f.integer("toy.grid") >= 1,
                       "must be >= 1");
  const auto xr = f.doubles("toy.x_range");
  const auto yr = f.doubles("toy.y_range");
  if (xr.size() != 2 || !(xr[0] <= xr[1])) throw Error(f.at("toy.x_range") + "toy.x_range needs lo,hi");
  if (yr.size() != 2 || !(yr[0] <= yr[1])) throw Error(f.at("toy.y_range") + "toy.y_range needs lo,hi");
  e.toy.x_lo = xr[0];
  e.toy.x_hi = xr[1];
  e.toy.y_lo = yr[0];
  e.toy.y_hi = yr[1];

  e.output_dir = f.str("output.dir");
  e.checkpoint = f.flag("output.checkpoint");

  for (const auto& k : config_keys()) {
    if (f.has(k.key)) e.resolved[k.key] = f.raw(k.key);
    else if (!k.fallback.empty() && k.key.rfind("ensemble.", 0) != 0 && k.key.rfind("stability.", 0) != 0)
      e.resolved[k.key] = k.fallback;
  }
  return e;
}

inline ExperimentConfig parse_config(const std::string& path) {
  return experiment_from(ConfigFile::load(path));
}

// ---------------------------------------------------------------------------
// Stability analyzer configuration
// ---------------------------------------------------------------------------

struct StabilityConfig {
  std::vector<SymMat> mats;
  std::vector<double> probs;
  bool random = false;
  std::size_t dim = 4;
  std::size_t members = 4;
  double lo = 0.1, hi = 2.0, spread = 0.3;
  std::uint64_t seed = 0;
  double eta = 0.0, rho = 0.0, eps = 0.0;
  long steps = 200;
  int n_traj = 200;
  std::vector<double> x0;
};

/// Parses "a,b;c,d|e,f;g,h" into symmetric matrices.
inline std::vector<SymMat> parse_matrices(const std::string& text, const std::string& where) {
  std::vector<SymMat> out;
  for (const auto& block : detail::split(text, '|')) {
    const auto rows = detail::split(block, ';');
    const std::size_t d = rows.size();
    Matrix m(d, d);
    for (std::size_t r = 0; r < d; ++r) {
      const auto cols = detail::split(rows[r], ',');
      if (cols.size() != d) throw Error(where + "ensemble matrix is not square");
      for (std::size_t c = 0; c < d; ++c) {
        const auto v = detail::to_double(cols[c]);
        if (!v) throw Error(where + "bad matrix entry '" + cols[c] + "'");
        m(r, c) = *v;
      }
    }
    try {
      out.emplace_back(m);
    } catch (const Error& e) {
      throw Error(where + e.what());
    }
  }
  return out;
}

inline StabilityConfig stability_from(const ConfigFile& f) {
  using detail::checked;
  StabilityConfig s;
  const std::string kind = f.str("ensemble.kind");
  if (kind == "explicit") {
    s.mats = parse_matrices(f.str("ensemble.mats"), f.at("ensemble.mats"));
    if (f.has("ensemble.probs")) s.probs = f.doubles("ensemble.probs");
    else s.probs.assign(s.mats.size(), 1.0 / static_cast<double>(s.mats.size()));
  } else if (kind == "random_commuting") {
    s.random = true;
  } else {
    throw Error(f.at("ensemble.kind") + "unknown ensemble.kind '" + kind + "'");
  }
  s.dim = checked(f, "ensemble.dim", static_cast<std::size_t>(std::max(0LL, f.integer("ensemble.dim"))),
                  f.integer("ensemble.dim") >= 1, "must be >= 1");
  s.members = checked(f, "ensemble.members",
                      static_cast<std::size_t>(std::max(0LL, f.integer("ensemble.members"))),
                      f.integer("ensemble.members") >= 1, "must be >= 1");
  s.lo = f.num("ensemble.lo");
  s.hi = f.num("ensemble.hi");
  s.spread = f.num("ensemble.spread");
  s.seed = static_cast<std::uint64_t>(f.integer("ensemble.seed"));
  s.eta = checked(f, "stability.eta", f.num("stability.eta"), f.num("stability.eta") > 0.0, "must be > 0");
  s.rho = checked(f, "stability.rho", f.num("stability.rho"), f.num("stability.rho") >= 0.0, "must be >= 0");
  s.eps = checked(f, "stability.eps", f.num("stability.eps"), f.num("stability.eps") > 0.0, "must be > 0");
  s.steps = checked(f, "stability.steps", static_cast<long>(f.integer("stability.steps")),
                    f.integer("stability.steps") >= 0, "must be >= 0");
  s.n_traj = checked(f, "stability.n_traj", static_cast<int>(f.integer("stability.n_traj")),
                     f.integer("stability.n_traj") >= 1, "must be >= 1");
  if (f.has("stability.x0")) s.x0 = f.doubles("stability.x0");
  return s;
}

}  // namespace sassha
