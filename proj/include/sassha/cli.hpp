#pragma once
// Command-line front end: train, sharpness, stability, toy, cost, summary.
// Exit codes: 0 success, 1 usage or validation error, 2 when the only
// problem was divergence of one or more runs.

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sassha/config.hpp"
#include "sassha/experiment.hpp"
#include "sassha/io.hpp"
#include "sassha/stability.hpp"

namespace sassha {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitDiverged = 2;

namespace detail {

struct CommonFlags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed_override;
  std::string format;  // empty: subcommand default
};

inline OutputFormat pick_format(const CommonFlags& c, OutputFormat fallback) {
  if (c.format.empty()) return fallback;
  return c.format == "json" ? OutputFormat::kJson : OutputFormat::kCsv;
}

inline ConfigFile load_with_override(const CommonFlags& c) {
  if (c.config.empty()) throw Error("--config is required");
  ConfigFile f = ConfigFile::load(c.config);
  if (c.seed_override) f.set("run.seeds", std::to_string(*c.seed_override));
  return f;
}

inline std::string report_csv(const StabilityReport& r) {
  std::ostringstream o;
  o << "quantity,value\n";
  o << "a," << fmt_double(r.a) << "\n";
  o << "s2," << fmt_double(r.s2) << "\ns3," << fmt_double(r.s3) << "\ns4," << fmt_double(r.s4) << "\n";
  for (std::size_t k = 0; k < 4; ++k) {
    const std::string i = std::to_string(k + 1);
    o << "lhs" << i << "," << fmt_double(r.lhs[k]) << "\n";
    o << "bound" << i << "," << fmt_double(r.bounds[k]) << "\n";
    o << "applicable" << i << "," << (r.applicable[k] == Applicability::kApplicable ? 1 : 0) << "\n";
    o << "condition" << i << "," << (r.conditions[k] ? 1 : 0) << "\n";
  }
  o << "lambda_max_M," << fmt_double(r.lambda_max_M) << "\nstable," << (r.stable ? 1 : 0) << "\n";
  return o.str();
}

inline nlohmann::json report_json(const StabilityReport& r) {
  nlohmann::json j;
  j["a"] = r.a;
  j["s2"] = r.s2;
  j["s3"] = r.s3;
  j["s4"] = r.s4;
  auto& conds = j["conditions"] = nlohmann::json::array();
  for (std::size_t k = 0; k < 4; ++k) {
    nlohmann::json c{{"index", k + 1}, {"lhs", r.lhs[k]},
                     {"applicable", r.applicable[k] == Applicability::kApplicable},
                     {"holds", r.conditions[k]}};
    if (std::isfinite(r.bounds[k])) c["bound"] = r.bounds[k];
    else c["bound"] = nullptr;
    conds.push_back(c);
  }
  j["gap_indefinite"] = {r.gap_indefinite[0], r.gap_indefinite[1], r.gap_indefinite[2]};
  j["lambda_max_M"] = r.lambda_max_M;
  j["stable"] = r.stable;
  return j;
}

inline int cmd_train(const CommonFlags& c, std::ostream& out) {
  const ExperimentConfig cfg = experiment_from(load_with_override(c));
  const std::filesystem::path dir = c.out.empty() ? cfg.output_dir : c.out;
  const auto recs = run_experiment(cfg);
  write_run_directory(dir, cfg, recs, pick_format(c, OutputFormat::kCsv));
  bool any_diverged = false;
  for (const auto& r : recs) {
    out << "seed " << r.seed << ": ";
    if (r.status == RunStatus::kCompleted) {
      out << "completed, train_loss=" << fmt_double(r.final_train_loss);
      if (std::isfinite(r.final_val_loss)) out << ", val_loss=" << fmt_double(r.final_val_loss);
    } else {
      any_diverged = true;
      out << "diverged at step " << r.diverged_step << " (" << r.divergence << ")";
    }
    out << ", gc=" << r.gc_count << ", hvp=" << r.hvp_count << "\n";
  }
  return any_diverged ? kExitDiverged : kExitOk;
}

inline int cmd_sharpness(const CommonFlags& c, const std::string& checkpoint, std::ostream& out) {
  const ExperimentConfig cfg = experiment_from(load_with_override(c));
  const std::uint64_t seed = cfg.run.seeds.front();
  const Problem prob = build_problem(cfg, seed);
  const std::filesystem::path path =
      checkpoint.empty() ? std::filesystem::path(cfg.output_dir) / std::to_string(seed) / "checkpoint.bin"
                         : std::filesystem::path(checkpoint);
  const Checkpoint ck = load_checkpoint(path);
  if (ck.x.size() != prob.train->dim())
    throw Error("checkpoint dimension " + std::to_string(ck.x.size()) + " does not match problem dimension " +
                std::to_string(prob.train->dim()));
  if (ck.problem_hash != prob.hash) throw Error("checkpoint was written for a different problem");
  RngStream rng = RngStream(seed).child("metrics").child("sharpness");
  const auto r = sharpness_report(*prob.train, ck.x, rng, cfg.metrics.sharpness_opts);
  std::string text;
  if (pick_format(c, OutputFormat::kCsv) == OutputFormat::kJson) {
    text = sharpness_json(r).dump(2) + "\n";
  } else {
    text = "lambda_max,trace,dl_grad,dl_avg,rho,n_mc,power_converged,near_critical\n" +
           fmt_double(r.lambda_max) + "," + fmt_double(r.trace) + "," + fmt_double(r.dl_grad) + "," +
           fmt_double(r.dl_avg) + "," + fmt_double(r.rho) + "," + std::to_string(r.n_mc) + "," +
           (r.power_converged ? "1" : "0") + "," + (r.near_critical ? "1" : "0") + "\n";
  }
  out << text;
  return r.finite ? kExitOk : kExitDiverged;
}

inline int cmd_stability(const CommonFlags& c, std::ostream& out) {
  if (c.config.empty()) throw Error("--config is required");
  const StabilityConfig sc = stability_from(ConfigFile::load(c.config));
  std::optional<Ensemble> ens;
  if (sc.random) {
    RngStream rng = RngStream(sc.seed).child("ensemble");
    ens = random_commuting_ensemble(rng, sc.dim, sc.members, sc.lo, sc.hi, sc.spread);
  } else {
    ens = Ensemble(sc.mats, sc.probs);
  }
  const auto rep = necessary_conditions(*ens, sc.eta, sc.rho, sc.eps);
  std::optional<SimulationResult> sim;
  if (sc.steps > 0) {
    Vec64 x0 = sc.x0.empty() ? Vec64(ens->dim(), 1.0) : Vec64(sc.x0);
    if (x0.size() != ens->dim()) throw Error("stability.x0 dimension does not match the ensemble");
    RngStream rng = RngStream(c.seed_override.value_or(sc.seed)).child("surrogate");
    sim = simulate_surrogate(*ens, sc.eta, sc.rho, sc.eps, x0, sc.steps, sc.n_traj, rng);
  }
  const OutputFormat fmt = pick_format(c, OutputFormat::kJson);
  std::string report;
  if (fmt == OutputFormat::kJson) {
    auto j = report_json(rep);
    j["commuting"] = ens->commuting();
    if (sim) {
      j["simulation"] = {{"steps", sc.steps},
                         {"n_traj", sc.n_traj},
                         {"ratio", sim->mean_sq_norm.back() / sim->mean_sq_norm.front()},
                         {"diverged", sim->diverged}};
    }
    report = j.dump(2) + "\n";
  } else {
    report = report_csv(rep);
  }
  out << report;
  if (!c.out.empty()) {
    std::filesystem::create_directories(c.out);
    write_text(std::filesystem::path(c.out) / (fmt == OutputFormat::kJson ? "stability.json" : "stability.csv"),
               report);
    if (sim) {
      std::ostringstream t;
      t << "step,mean_sq_norm\n";
      for (std::size_t i = 0; i < sim->mean_sq_norm.size(); ++i)
        t << i << "," << fmt_double(sim->mean_sq_norm[i]) << "\n";
      write_text(std::filesystem::path(c.out) / "trajectory.csv", t.str());
    }
  }
  return sim && sim->diverged ? kExitDiverged : kExitOk;
}

inline int cmd_toy(const CommonFlags& c, std::ostream& out) {
  ConfigFile f = load_with_override(c);
  if (!f.has("problem.x0")) f.set("problem.x0", "0,0");  // the grid supplies starting points
  const ExperimentConfig cfg = experiment_from(f);
  const auto pts = toy_sweep(cfg, cfg.run.seeds.front());
  std::string text;
  bool any_diverged = false;
  if (pick_format(c, OutputFormat::kCsv) == OutputFormat::kJson) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& p : pts) {
      j.push_back({{"init", {p.x0[0], p.x0[1]}},
                   {"final", {p.x_final[0], p.x_final[1]}},
                   {"basin", p.basin},
                   {"trace", p.trace},
                   {"diverged", p.diverged}});
      any_diverged |= p.diverged;
    }
    text = j.dump(2) + "\n";
  } else {
    std::ostringstream o;
    o << "init_x,init_y,final_x,final_y,basin,trace,diverged\n";
    for (const auto& p : pts) {
      o << fmt_double(p.x0[0]) << ',' << fmt_double(p.x0[1]) << ',' << fmt_double(p.x_final[0]) << ','
        << fmt_double(p.x_final[1]) << ',' << p.basin << ',' << fmt_double(p.trace) << ','
        << (p.diverged ? 1 : 0) << '\n';
      any_diverged |= p.diverged;
    }
    text = o.str();
  }
  out << text;
  if (!c.out.empty()) {
    std::filesystem::create_directories(c.out);
    write_text(std::filesystem::path(c.out) / (text.front() == '[' ? "toy.json" : "toy.csv"), text);
  }
  return any_diverged ? kExitDiverged : kExitOk;
}

inline int cmd_cost(const CommonFlags& c, std::ostream& out) {
  OptimizerConfig base;
  long steps = 1000;
  bool k_given = false;
  if (!c.config.empty()) {
    const ConfigFile f = ConfigFile::load(c.config);
    k_given = f.has("optimizer.k");
    base.k = static_cast<int>(f.integer("optimizer.k"));
    base.n_hutch = static_cast<int>(f.integer("optimizer.n_hutch"));
    if (base.k < 1) throw Error(f.at("optimizer.k") + "key 'optimizer.k' must be >= 1");
    if (base.n_hutch < 1) throw Error(f.at("optimizer.n_hutch") + "key 'optimizer.n_hutch' must be >= 1");
    if (f.has("run.steps")) steps = static_cast<long>(f.integer("run.steps"));
    if (steps < 1) throw Error(f.at("run.steps") + "key 'run.steps' must be >= 1");
  }
  const Method all[] = {Method::kSassha,   Method::kMSassha,    Method::kSamSgdm, Method::kSamAdamw,
                        Method::kAdaHessian, Method::kSophiaH, Method::kAdamW,   Method::kSgdm};
  const bool json = pick_format(c, OutputFormat::kCsv) == OutputFormat::kJson;
  nlohmann::json j = nlohmann::json::array();
  std::ostringstream o;
  o << "method,k,steps,gc,hvp,gc_per_step,hvp_per_step,gc_equivalent\n";
  for (Method m : all) {
    OptimizerConfig oc = base;
    oc.method = m;
    if (m == Method::kSophiaH && !k_given) oc.k = 1;
    const auto counts = expected_counts(oc, steps);
    const auto r = cost_model(oc, steps);
    const std::string name(to_string(m));
    if (json)
      j.push_back({{"method", name}, {"k", oc.k}, {"steps", steps}, {"gc", counts.gc}, {"hvp", counts.hvp},
                   {"gc_per_step", r.gc_per_step}, {"hvp_per_step", r.hvp_per_step},
                   {"gc_equivalent", r.gc_equivalent}});
    else
      o << name << ',' << oc.k << ',' << steps << ',' << counts.gc << ',' << counts.hvp << ','
        << fmt_double(r.gc_per_step) << ',' << fmt_double(r.hvp_per_step) << ','
        << fmt_double(r.gc_equivalent) << '\n';
  }
  out << (json ? j.dump(2) + "\n" : o.str());
  return kExitOk;
}

inline int cmd_summary(const CommonFlags& c, const std::vector<std::string>& dirs, std::ostream& out) {
  if (dirs.empty()) throw Error("summary: give at least one run directory");
  const bool json = pick_format(c, OutputFormat::kCsv) == OutputFormat::kJson;
  nlohmann::json j = nlohmann::json::array();
  std::ostringstream o;
  o << "run,metric,n,mean,std,diverged,failed\n";
  for (const auto& d : dirs) {
    if (!std::filesystem::is_directory(d)) throw Error("summary: '" + d + "' is not a directory");
    std::vector<std::filesystem::path> finals;
    for (const auto& entry : std::filesystem::directory_iterator(d))
      if (entry.is_directory() && std::filesystem::exists(entry.path() / "final.json"))
        finals.push_back(entry.path() / "final.json");
    std::sort(finals.begin(), finals.end());
    if (finals.empty()) throw Error("summary: no <seed>/final.json under '" + d + "'");
    std::vector<SeedOutcome> outcomes;
    for (const auto& p : finals) outcomes.push_back(read_outcome(p));
    for (const auto& s : summarize(outcomes)) {
      if (json)
        j.push_back({{"run", d}, {"metric", s.metric}, {"n", s.n},
                     {"mean", std::isfinite(s.mean) ? nlohmann::json(s.mean) : nlohmann::json()},
                     {"std", std::isfinite(s.std) ? nlohmann::json(s.std) : nlohmann::json()},
                     {"diverged", s.diverged}, {"failed", s.failed}});
      else
        o << d << ',' << s.metric << ',' << s.n << ',' << fmt_double(s.mean) << ',' << fmt_double(s.std) << ','
          << s.diverged << ',' << (s.failed ? 1 : 0) << '\n';
    }
  }
  const std::string text = json ? j.dump(2) + "\n" : o.str();
  out << text;
  if (!c.out.empty()) {
    std::filesystem::create_directories(c.out);
    write_text(std::filesystem::path(c.out) / (json ? "summary.json" : "summary.csv"), text);
  }
  return kExitOk;
}

}  // namespace detail

/// Entry point with injectable streams (tests call this directly).
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"sassha_lab: SASSHA optimizer laboratory"};
  app.require_subcommand(1);
  detail::CommonFlags flags;
  std::uint64_t seed_override = 0;
  std::string checkpoint;
  std::vector<std::string> run_dirs;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* opt = sub->add_option("--config", flags.config, "configuration file");
    if (needs_config) opt->required();
    sub->add_option("--out", flags.out, "output directory");
    sub->add_option("--seed-override", seed_override, "replace run.seeds with this seed");
    sub->add_option("--format", flags.format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
  };
  auto* train = app.add_subcommand("train", "run the configured experiment for every seed");
  add_common(train, true);
  auto* sharp = app.add_subcommand("sharpness", "sharpness metrics of a saved parameter vector");
  add_common(sharp, true);
  sharp->add_option("--checkpoint", checkpoint, "checkpoint path (default <output.dir>/<seed>/checkpoint.bin)");
  auto* stab = app.add_subcommand("stability", "linear-stability analysis of an ensemble");
  add_common(stab, true);
  auto* toy = app.add_subcommand("toy", "two-basin mixture sweep over an initialization grid");
  add_common(toy, true);
  auto* cost = app.add_subcommand("cost", "per-method GC/HVP cost model");
  add_common(cost, false);
  auto* summ = app.add_subcommand("summary", "aggregate run directories");
  add_common(summ, false);
  summ->add_option("runs", run_dirs, "run directories")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitValidation;
  }

  for (auto* sub : app.get_subcommands())
    if (sub->count("--seed-override")) flags.seed_override = seed_override;

  try {
    if (train->parsed()) return detail::cmd_train(flags, out);
    if (sharp->parsed()) return detail::cmd_sharpness(flags, checkpoint, out);
    if (stab->parsed()) return detail::cmd_stability(flags, out);
    if (toy->parsed()) return detail::cmd_toy(flags, out);
    if (cost->parsed()) return detail::cmd_cost(flags, out);
    if (summ->parsed()) return detail::cmd_summary(flags, run_dirs, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  err << app.help();
  return kExitValidation;
}

}  // namespace sassha
