#pragma once
// Experiment orchestration: problem construction from a config, the
// per-seed training loop, and aggregation (summary statistics, cost report).

#include <chrono>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sassha/config.hpp"
#include "sassha/objectives.hpp"
#include "sassha/optimizers.hpp"
#include "sassha/sharpness.hpp"

namespace sassha {

/// A built problem: the training objective, optional validation metrics
/// and the initial point.
struct Problem {
  std::shared_ptr<Objective> train;
  std::function<double(const Vec64&)> val_loss;      // empty when no validation split
  std::function<double(const Vec64&)> val_accuracy;  // empty when not a classifier
  Vec64 x0;
  std::uint64_t hash = 0;  // identifies problem config + data seed, stored in checkpoints
};

namespace detail {

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

inline Vec64 initial_point(const ProblemConfig& p, std::size_t d, RngStream& rng) {
  if (!p.x0.empty()) {
    if (p.x0.size() != d)
      throw Error("problem.x0 has " + std::to_string(p.x0.size()) + " entries, problem dimension is " +
                  std::to_string(d));
    return Vec64(p.x0);
  }
  return p.init_scale * gaussian(rng, d);
}

inline Dataset load_or_generate(const ProblemConfig& p, RngStream& rng) {
  switch (p.data) {
    case DataKind::kCsv: return load_csv(p.data_path);
    case DataKind::kTeacher: return make_logistic_teacher(rng, p.n, p.features, p.teacher_scale);
    case DataKind::kBlobs: return make_blobs(rng, p.n, p.features, p.classes, p.separation, p.noise);
  }
  throw Error("unreachable data kind");
}

}  // namespace detail

/// Builds the problem for one run seed. The data stream is the run's
/// "data" child unless problem.data_seed pins it.
inline Problem build_problem(const ExperimentConfig& cfg, std::uint64_t seed) {
  const ProblemConfig& p = cfg.problem;
  const std::uint64_t data_seed = p.data_seed.value_or(seed);
  RngStream data = RngStream(data_seed).child("data");
  RngStream init = RngStream(seed).child("init");

  std::string fingerprint = "data_seed=" + std::to_string(data_seed) + "\n";
  for (const auto& [k, v] : cfg.resolved)
    if (k.rfind("problem.", 0) == 0) fingerprint += k + "=" + v + "\n";

  Problem out;
  out.hash = detail::fnv1a(fingerprint);
  switch (p.kind) {
    case ProblemKind::kQuadratic: {
      SymMat h = random_spd(data, p.dim, p.condition, p.lambda_min);
      Vec64 b = p.linear ? gaussian(data, p.dim) : Vec64(p.dim);
      out.train = std::make_shared<QuadraticObjective>(std::move(h), std::move(b));
      out.x0 = detail::initial_point(p, p.dim, init);
      break;
    }
    case ProblemKind::kMixture: {
      out.train = std::make_shared<GaussianMixtureLandscape>(p.mixture);
      if (p.x0.empty()) throw Error("problem.kind=mixture needs problem.x0");
      out.x0 = detail::initial_point(p, 2, init);
      break;
    }
    case ProblemKind::kLogistic:
    case ProblemKind::kMlp: {
      Dataset full = detail::load_or_generate(p, data);
      Dataset train_ds = full, val_ds;
      bool has_val = p.val_fraction > 0.0;
      if (has_val) std::tie(train_ds, val_ds) = split_dataset(full, p.val_fraction, data);
      if (p.label_noise > 0.0) train_ds = inject_label_noise(train_ds, p.label_noise, data);
      if (p.kind == ProblemKind::kLogistic) {
        auto obj = std::make_shared<LogisticRegression>(train_ds, p.l2);
        out.x0 = detail::initial_point(p, obj->dim(), init);
        if (has_val) {
          auto val = std::make_shared<LogisticRegression>(val_ds, p.l2);
          out.val_loss = [val](const Vec64& x) { return val->value_full(x); };
          out.val_accuracy = [val, vds = val_ds](const Vec64& x) { return val->accuracy(x, vds); };
        }
        out.train = obj;
      } else {
        auto obj = std::make_shared<MlpObjective>(train_ds, p.hidden, p.activation, p.loss);
        out.x0 = p.x0.empty() ? obj->initial_point(init) : detail::initial_point(p, obj->dim(), init);
        if (has_val) {
          auto val = std::make_shared<MlpObjective>(val_ds, p.hidden, p.activation, p.loss);
          out.val_loss = [val](const Vec64& x) { return val->value_full(x); };
          out.val_accuracy = [val](const Vec64& x) { return val->accuracy(x, val->dataset()); };
        }
        out.train = obj;
      }
      break;
    }
  }
  return out;
}

struct StepRow {
  long step = 0;
  double train_loss = std::numeric_limits<double>::quiet_NaN();  // full batch, at x_t
  double grad_norm = std::numeric_limits<double>::quiet_NaN();   // full batch, at x_t
  double lr = 0.0;
  double rho = 0.0;
  double update_norm = 0.0;  // ‖x_{t+1} − x_t‖₂
  long gc_count = 0;
  long hvp_count = 0;
};

struct EvalRow {
  long step = 0;  // evaluated at x after `step` updates
  double val_loss = std::numeric_limits<double>::quiet_NaN();
  double val_accuracy = std::numeric_limits<double>::quiet_NaN();
};

enum class RunStatus { kCompleted, kDiverged };

struct RunRecord {
  std::uint64_t seed = 0;
  Method method = Method::kSassha;
  std::vector<StepRow> steps;
  std::vector<EvalRow> evals;
  std::optional<SharpnessReport> sharpness;
  std::optional<double> sensitivity_mid;
  RunStatus status = RunStatus::kCompleted;
  long diverged_step = -1;
  std::string divergence;  // offending quantity
  Vec64 x_final;
  std::uint64_t problem_hash = 0;
  double final_train_loss = std::numeric_limits<double>::quiet_NaN();
  double final_val_loss = std::numeric_limits<double>::quiet_NaN();
  double final_val_accuracy = std::numeric_limits<double>::quiet_NaN();
  long gc_count = 0;
  long hvp_count = 0;
  double wall_seconds = 0.0;  // informational only

  /// Scalar end-of-run metrics keyed by name; absent metrics are omitted.
  std::map<std::string, double> final_metrics() const {
    std::map<std::string, double> m;
    auto put = [&](const char* k, double v) {
      if (std::isfinite(v)) m[k] = v;
    };
    put("train_loss", final_train_loss);
    put("val_loss", final_val_loss);
    put("val_accuracy", final_val_accuracy);
    if (sharpness) {
      put("lambda_max", sharpness->lambda_max);
      put("trace", sharpness->trace);
      put("dl_grad", sharpness->dl_grad);
      put("dl_avg", sharpness->dl_avg);
    }
    if (sensitivity_mid) put("sensitivity_mid", *sensitivity_mid);
    return m;
  }
};

/// Steps for the config: run.steps, or epochs × batches per epoch.
inline long resolved_steps(const ExperimentConfig& cfg, const Problem& p) {
  if (!cfg.run.epochs) return cfg.run.steps;
  const std::size_t n = p.train->num_examples();
  const std::size_t bs = cfg.problem.batch_size == 0 ? n : std::min(cfg.problem.batch_size, n);
  return *cfg.run.epochs * static_cast<long>((n + bs - 1) / bs);
}

/// One seed. Divergence ends the run and is recorded, never thrown.
inline RunRecord run_single(const ExperimentConfig& cfg, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  const Problem prob = build_problem(cfg, seed);
  const Objective& f = *prob.train;
  const long total = resolved_steps(cfg, prob);

  RngStream root(seed);
  RngStream opt_rng = root.child("optimizer");
  RngStream metric_rng = root.child("metrics");
  RngStream hutch_rng = opt_rng.child("hutchinson");
  const std::size_t n = f.num_examples();
  const std::size_t bs = cfg.problem.batch_size == 0 ? n : std::min(cfg.problem.batch_size, n);
  MinibatchSampler sampler(opt_rng.child("batches"), n, bs);

  OptimizerConfig oc = cfg.optimizer;
  oc.total_steps = total;
  oc.validate();

  RunRecord rec;
  rec.seed = seed;
  rec.method = oc.method;
  rec.problem_hash = prob.hash;
  OptState s = OptState::init(prob.x0);
  const Batch full = f.full_batch();

  auto evaluate = [&](long step) {
    EvalRow e;
    e.step = step;
    if (prob.val_loss) e.val_loss = prob.val_loss(s.x);
    if (prob.val_accuracy) e.val_accuracy = prob.val_accuracy(s.x);
    rec.evals.push_back(e);
  };

  try {
    for (long t = 1; t <= total; ++t) {
      StepRow row;
      row.step = t;
      row.lr = schedule_value(oc.lr, t, total);
      row.rho = schedule_value(oc.rho, t, total);
      if (cfg.metrics.per_step_loss) {
        row.train_loss = f.value(s.x, full);
        row.grad_norm = norm2(f.grad(s.x, full));
      }
      const Batch batch = bs == n ? full : sampler.next();
      const Vec64 before = s.x;
      optimizer_step(s, f, batch, hutch_rng, oc);
      row.update_norm = norm2(s.x - before);
      row.gc_count = s.gc_count;
      row.hvp_count = s.hvp_count;
      rec.steps.push_back(row);
      if (cfg.metrics.sensitivity && t == std::max(1L, total / 2)) {
        RngStream sr = metric_rng.child("sensitivity");
        rec.sensitivity_mid = hessian_sensitivity(f, s.x, cfg.metrics.sensitivity_rho,
                                                  cfg.metrics.sensitivity_dirs,
                                                  cfg.metrics.sensitivity_probes, sr);
      }
      if (cfg.run.eval_every > 0 && t % cfg.run.eval_every == 0 && t != total) evaluate(t);
    }
  } catch (const DivergenceError& e) {
    rec.status = RunStatus::kDiverged;
    rec.diverged_step = s.t;
    rec.divergence = e.quantity();
  }
  rec.gc_count = s.gc_count;
  rec.hvp_count = s.hvp_count;
  rec.x_final = s.x;
  if (rec.status == RunStatus::kCompleted) {
    rec.final_train_loss = f.value(s.x, full);
    evaluate(total);
    rec.final_val_loss = rec.evals.back().val_loss;
    rec.final_val_accuracy = rec.evals.back().val_accuracy;
    if (cfg.metrics.sharpness) {
      RngStream sr = metric_rng.child("sharpness");
      rec.sharpness = sharpness_report(f, s.x, sr, cfg.metrics.sharpness_opts);
    }
  }
  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

/// One record per seed, in seed-list order.
inline std::vector<RunRecord> run_experiment(const ExperimentConfig& cfg) {
  if (cfg.run.seeds.empty()) throw Error("run_experiment: seed list is empty");
  std::vector<RunRecord> out;
  for (std::uint64_t seed : cfg.run.seeds) out.push_back(run_single(cfg, seed));
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

/// Per-seed end-of-run metrics as read back from a run directory.
struct SeedOutcome {
  std::uint64_t seed = 0;
  bool diverged = false;
  std::map<std::string, double> metrics;
};

inline SeedOutcome outcome_of(const RunRecord& r) {
  return {r.seed, r.status == RunStatus::kDiverged, r.final_metrics()};
}

struct MetricSummary {
  std::string metric;
  std::size_t n = 0;  // completed seeds contributing
  double mean = std::numeric_limits<double>::quiet_NaN();
  double std = std::numeric_limits<double>::quiet_NaN();  // sample std; 0 when n == 1
  std::size_t diverged = 0;
  bool failed = false;  // every seed diverged
};

inline std::vector<MetricSummary> summarize(const std::vector<SeedOutcome>& outcomes) {
  if (outcomes.empty()) throw Error("summarize: need at least one record");
  std::size_t diverged = 0;
  std::map<std::string, std::vector<double>> values;
  for (const auto& o : outcomes) {
    if (o.diverged) {
      ++diverged;
      continue;
    }
    for (const auto& [k, v] : o.metrics) values[k].push_back(v);
  }
  std::vector<MetricSummary> out;
  if (diverged == outcomes.size()) {
    MetricSummary s;
    s.metric = "all";
    s.diverged = diverged;
    s.failed = true;
    out.push_back(s);
    return out;
  }
  for (const auto& [k, vs] : values) {
    MetricSummary s;
    s.metric = k;
    s.n = vs.size();
    s.diverged = diverged;
    double sum = 0.0;
    for (double v : vs) sum += v;
    s.mean = sum / static_cast<double>(vs.size());
    double ss = 0.0;
    for (double v : vs) ss += (v - s.mean) * (v - s.mean);
    s.std = vs.size() > 1 ? std::sqrt(ss / static_cast<double>(vs.size() - 1)) : 0.0;
    out.push_back(s);
  }
  return out;
}

inline std::vector<MetricSummary> summarize(const std::vector<RunRecord>& records) {
  std::vector<SeedOutcome> o;
  for (const auto& r : records) o.push_back(outcome_of(r));
  return summarize(o);
}

struct CostReport {
  double gc_per_step = 0.0;
  double hvp_per_step = 0.0;
  /// gc + 3·hvp per step.
  double gc_equivalent = 0.0;
};

inline constexpr double kHvpInGc = 3.0;

inline CostReport cost_report(const std::vector<RunRecord>& records) {
  if (records.empty()) throw Error("cost_report: need at least one record");
  CostReport c;
  for (const auto& r : records) {
    const double steps = std::max<double>(1.0, static_cast<double>(r.steps.size()));
    c.gc_per_step += static_cast<double>(r.gc_count) / steps;
    c.hvp_per_step += static_cast<double>(r.hvp_count) / steps;
  }
  c.gc_per_step /= static_cast<double>(records.size());
  c.hvp_per_step /= static_cast<double>(records.size());
  c.gc_equivalent = c.gc_per_step + kHvpInGc * c.hvp_per_step;
  return c;
}

/// Analytic model: per-step costs from expected_counts over `steps`.
inline CostReport cost_model(const OptimizerConfig& oc, long steps) {
  const auto e = expected_counts(oc, steps);
  CostReport c;
  c.gc_per_step = static_cast<double>(e.gc) / static_cast<double>(steps);
  c.hvp_per_step = static_cast<double>(e.hvp) / static_cast<double>(steps);
  c.gc_equivalent = c.gc_per_step + kHvpInGc * c.hvp_per_step;
  return c;
}

// ---------------------------------------------------------------------------
// Toy landscape sweep
// ---------------------------------------------------------------------------

struct ToyPoint {
  Vec64 x0;
  Vec64 x_final;
  std::size_t basin = 0;  // nearest component mean
  double trace = 0.0;     // tr ∇²f at x_final
  bool diverged = false;
};

/// Runs the configured optimizer from every point of a grid×grid lattice
/// over the configured ranges (endpoints included) on the mixture landscape.
inline std::vector<ToyPoint> toy_sweep(const ExperimentConfig& cfg, std::uint64_t seed) {
  if (cfg.problem.kind != ProblemKind::kMixture) throw Error("toy: problem.kind must be mixture");
  const GaussianMixtureLandscape f(cfg.problem.mixture);
  const Batch full = f.full_batch();
  OptimizerConfig oc = cfg.optimizer;
  const long total = cfg.run.epochs ? *cfg.run.epochs : cfg.run.steps;
  oc.total_steps = total;
  oc.validate();
  const int g = cfg.toy.grid;
  auto lin = [g](double lo, double hi, int i) {
    return g == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * static_cast<double>(i) / (g - 1);
  };
  const RngStream root = RngStream(seed).child("toy");
  std::vector<ToyPoint> out;
  for (int iy = 0; iy < g; ++iy)
    for (int ix = 0; ix < g; ++ix) {
      ToyPoint pt;
      pt.x0 = Vec64{lin(cfg.toy.x_lo, cfg.toy.x_hi, ix), lin(cfg.toy.y_lo, cfg.toy.y_hi, iy)};
      RngStream rng = root.child(static_cast<std::uint64_t>(out.size()));
      OptState s = OptState::init(pt.x0);
      try {
        for (long t = 1; t <= total; ++t) optimizer_step(s, f, full, rng, oc);
      } catch (const DivergenceError&) {
        pt.diverged = true;
      }
      pt.x_final = s.x;
      pt.basin = f.nearest_component(s.x);
      pt.trace = f.hessian(s.x).trace();
      out.push_back(std::move(pt));
    }
  return out;
}

}  // namespace sassha
