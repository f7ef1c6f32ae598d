#pragma once
// Run-directory artifacts: per-seed CSV traces, JSON summaries and the
// run manifest, and the binary parameter checkpoint.
//
// Layout under the output directory:
//   manifest.json
//   <seed>/record.csv    step,train_loss,grad_norm,lr,rho,update_norm,gc_count,hvp_count
//   <seed>/eval.csv      step,val_loss,val_accuracy
//   <seed>/final.json    status, counters, end-of-run metrics
//   <seed>/checkpoint.bin
//
// Checkpoint format (little-endian): 8-byte magic "SASSHAX1", u64 dimension,
// u64 problem hash, then dimension × IEEE-754 binary64.

#include <bit>
#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "sassha/experiment.hpp"

namespace sassha {

inline constexpr std::string_view kVersion = "1.0.0";
inline constexpr std::string_view kRecordHeader =
    "step,train_loss,grad_norm,lr,rho,update_norm,gc_count,hvp_count";
inline constexpr std::string_view kEvalHeader = "step,val_loss,val_accuracy";

/// Shortest round-trip text for a double ("nan"/"inf" spelled out).
inline std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

inline void write_record_csv(std::ostream& out, const RunRecord& r) {
  out << kRecordHeader << '\n';
  for (const auto& s : r.steps)
    out << s.step << ',' << fmt_double(s.train_loss) << ',' << fmt_double(s.grad_norm) << ','
        << fmt_double(s.lr) << ',' << fmt_double(s.rho) << ',' << fmt_double(s.update_norm) << ','
        << s.gc_count << ',' << s.hvp_count << '\n';
}

inline void write_eval_csv(std::ostream& out, const RunRecord& r) {
  out << kEvalHeader << '\n';
  for (const auto& e : r.evals)
    out << e.step << ',' << fmt_double(e.val_loss) << ',' << fmt_double(e.val_accuracy) << '\n';
}

inline nlohmann::json sharpness_json(const SharpnessReport& s) {
  return {{"lambda_max", s.lambda_max}, {"trace", s.trace},       {"dl_grad", s.dl_grad},
          {"dl_avg", s.dl_avg},         {"rho", s.rho},           {"n_mc", s.n_mc},
          {"power_converged", s.power_converged},                 {"near_critical", s.near_critical},
          {"finite", s.finite}};
}

inline nlohmann::json record_json(const RunRecord& r, bool include_trace) {
  nlohmann::json j;
  j["seed"] = r.seed;
  j["method"] = std::string(to_string(r.method));
  j["status"] = r.status == RunStatus::kCompleted ? "completed" : "diverged";
  if (r.status == RunStatus::kDiverged) {
    j["diverged_step"] = r.diverged_step;
    j["divergence"] = r.divergence;
  }
  j["steps_completed"] = r.steps.size();
  j["gc_count"] = r.gc_count;
  j["hvp_count"] = r.hvp_count;
  j["metrics"] = nlohmann::json::object();
  for (const auto& [k, v] : r.final_metrics()) j["metrics"][k] = v;
  if (r.sharpness) j["sharpness"] = sharpness_json(*r.sharpness);
  if (include_trace) {
    auto& rows = j["record"] = nlohmann::json::array();
    for (const auto& s : r.steps)
      rows.push_back({s.step, s.train_loss, s.grad_norm, s.lr, s.rho, s.update_norm, s.gc_count,
                      s.hvp_count});
    auto& ev = j["eval"] = nlohmann::json::array();
    for (const auto& e : r.evals) ev.push_back({e.step, e.val_loss, e.val_accuracy});
  }
  return j;
}

/// Reads back a final.json into the aggregation form.
inline SeedOutcome read_outcome(const std::filesystem::path& final_json) {
  std::ifstream in(final_json);
  if (!in) throw Error("cannot open '" + final_json.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw Error("malformed '" + final_json.string() + "': " + e.what());
  }
  SeedOutcome o;
  o.seed = j.value("seed", std::uint64_t{0});
  o.diverged = j.value("status", std::string("completed")) == "diverged";
  if (j.contains("metrics"))
    for (const auto& [k, v] : j["metrics"].items())
      if (v.is_number()) o.metrics[k] = v.get<double>();
  return o;
}

// ---------------------------------------------------------------------------
// Checkpoint
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'S', 'A', 'S', 'S', 'H', 'A', 'X', '1'};

namespace detail {

inline void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw Error("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace detail

struct Checkpoint {
  Vec64 x;
  std::uint64_t problem_hash = 0;
};

inline void write_checkpoint(std::ostream& out, const Vec64& x, std::uint64_t problem_hash) {
  out.write(kCheckpointMagic, 8);
  detail::put_u64(out, x.size());
  detail::put_u64(out, problem_hash);
  for (std::size_t i = 0; i < x.size(); ++i) detail::put_u64(out, std::bit_cast<std::uint64_t>(x[i]));
}

inline Checkpoint read_checkpoint(std::istream& in) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw Error("checkpoint: bad magic");
  const std::uint64_t d = detail::get_u64(in);
  if (d == 0 || d > (1ULL << 32)) throw Error("checkpoint: implausible dimension");
  Checkpoint c;
  c.problem_hash = detail::get_u64(in);
  c.x = Vec64(static_cast<std::size_t>(d));
  for (std::size_t i = 0; i < d; ++i) c.x[i] = std::bit_cast<double>(detail::get_u64(in));
  if (in.peek() != std::char_traits<char>::eof()) throw Error("checkpoint: trailing bytes");
  return c;
}

inline void save_checkpoint(const std::filesystem::path& p, const Vec64& x, std::uint64_t hash) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write '" + p.string() + "'");
  write_checkpoint(out, x, hash);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot open '" + p.string() + "'");
  return read_checkpoint(in);
}

// ---------------------------------------------------------------------------
// Run directory
// ---------------------------------------------------------------------------

enum class OutputFormat { kCsv, kJson };

inline nlohmann::json manifest_json(const ExperimentConfig& cfg, const std::vector<RunRecord>& recs) {
  nlohmann::json j;
  j["software"] = "sassha_lab";
  j["version"] = std::string(kVersion);
  j["rng_algorithm"] = std::string(RngStream::kAlgorithm);
  j["config"] = cfg.resolved;
  auto& runs = j["runs"] = nlohmann::json::array();
  for (const auto& r : recs)
    runs.push_back({{"seed", r.seed},
                    {"status", r.status == RunStatus::kCompleted ? "completed" : "diverged"},
                    {"wall_seconds", r.wall_seconds}});
  return j;
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write '" + p.string() + "'");
  out << text;
}

/// Writes every seed's artifacts plus the manifest under `dir`.
inline void write_run_directory(const std::filesystem::path& dir, const ExperimentConfig& cfg,
                                const std::vector<RunRecord>& recs, OutputFormat fmt) {
  std::filesystem::create_directories(dir);
  for (const auto& r : recs) {
    const auto sd = dir / std::to_string(r.seed);
    std::filesystem::create_directories(sd);
    if (fmt == OutputFormat::kCsv) {
      std::ostringstream rec, ev;
      write_record_csv(rec, r);
      write_eval_csv(ev, r);
      write_text(sd / "record.csv", rec.str());
      write_text(sd / "eval.csv", ev.str());
    } else {
      write_text(sd / "record.json", record_json(r, true).dump(2) + "\n");
    }
    write_text(sd / "final.json", record_json(r, false).dump(2) + "\n");
    if (cfg.checkpoint) save_checkpoint(sd / "checkpoint.bin", r.x_final, r.problem_hash);
  }
  write_text(dir / "manifest.json", manifest_json(cfg, recs).dump(2) + "\n");
}

}  // namespace sassha
