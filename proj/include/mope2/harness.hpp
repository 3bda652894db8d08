#pragma once

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mope2/agent.hpp"
#include "mope2/config.hpp"
#include "mope2/dynamics.hpp"
#include "mope2/pca.hpp"

namespace mope2 {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr int kMetricsSchemaVersion = 1;
inline constexpr const char* kMetricsCsvHeader = "epoch,true_return,beta,model_loss_mean,planner_best_return";

namespace fs = std::filesystem;

/// Shortest round-trip decimal form; NaN becomes an empty string.
inline std::string format_number(double v) {
  if (std::isnan(v)) return "";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

inline json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline std::string metrics_csv_row(const EpochRecord& r) {
  return std::to_string(r.epoch) + "," + format_number(r.true_return) + "," + format_number(r.beta) + "," +
         format_number(r.model_loss_mean) + "," + format_number(r.planner_best_return);
}

inline json epoch_record_json(const EpochRecord& r) {
  json losses = json::array();
  for (double l : r.member_losses) losses.push_back(number_or_null(l));
  return {{"schema_version", kMetricsSchemaVersion},
          {"epoch", r.epoch},
          {"true_return", number_or_null(r.true_return)},
          {"episodes_finished", r.episodes_finished},
          {"beta", r.beta},
          {"planned", r.planned},
          {"planner_best_return", number_or_null(r.planner_best_return)},
          {"planner_iterations", number_or_null(r.planner_iterations)},
          {"elite_return_mean", number_or_null(r.elite_return_mean)},
          {"elite_return_std", number_or_null(r.elite_return_std)},
          {"trained", r.trained},
          {"train_at_step", r.train_at_step},
          {"gradient_steps", r.gradient_steps},
          {"member_losses", losses},
          {"model_loss_mean", number_or_null(r.model_loss_mean)},
          {"reward_mse", number_or_null(r.reward_mse)},
          {"buffer_size", r.buffer_size}};
}

inline fs::path output_root(const std::string& cli_value = "") {
  if (!cli_value.empty()) return cli_value;
  if (const char* env = std::getenv("MOPE2_OUTPUT_ROOT"); env && *env) return env;
  return "runs";
}

struct RunArtifacts {
  fs::path dir;
  std::vector<EpochRecord> records;
  std::optional<EvalResult> evaluation;
};

namespace detail {
inline std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + p.string());
  return out;
}
inline void check_stream(std::ostream& out, const fs::path& p) {
  out.flush();
  if (!out) throw Error("write failed: " + p.string());
}
}  // namespace detail

/// Runs one configuration into `dir`:
///   config.json     resolved configuration (re-parses to the same config)
///   manifest.json   run id, seed, version, schema version, file layout
///   metrics.jsonl   one epoch record per line
///   metrics.csv     epoch,true_return,beta,model_loss_mean,planner_best_return
///   actions.csv     executed actions: epoch,step,a0,a1,...
///   checkpoint.json final dynamics ensemble + reward net
///   eval.json       final beta = 0 evaluation
inline RunArtifacts run_to_directory(const RunConfig& cfg, const fs::path& dir, const std::string& run_id) {
  fs::create_directories(dir);
  const json resolved = to_json(cfg);
  {
    auto out = detail::open_out(dir / "config.json");
    out << resolved.dump(2) << '\n';
    detail::check_stream(out, dir / "config.json");
  }
  {
    json manifest = {{"run_id", run_id},
                     {"seed", cfg.seed},
                     {"code_version", kVersion},
                     {"schema_version", kMetricsSchemaVersion},
                     {"config", resolved},
                     {"files",
                      {{"config", "config.json"},
                       {"metrics_jsonl", "metrics.jsonl"},
                       {"metrics_csv", "metrics.csv"},
                       {"actions", "actions.csv"},
                       {"checkpoint", "checkpoint.json"},
                       {"evaluation", "eval.json"}}}};
    auto out = detail::open_out(dir / "manifest.json");
    out << manifest.dump(2) << '\n';
    detail::check_stream(out, dir / "manifest.json");
  }

  auto jsonl = detail::open_out(dir / "metrics.jsonl");
  auto csv = detail::open_out(dir / "metrics.csv");
  auto actions = detail::open_out(dir / "actions.csv");
  csv << kMetricsCsvHeader << '\n';
  {
    auto env = cfg.make_env();
    actions << "epoch,step";
    for (int i = 0; i < env->action_dim(); ++i) actions << ",a" << i;
    actions << '\n';
  }
  RunObserver obs;
  obs.on_epoch = [&](const EpochRecord& r, const Mat& acts) {
    jsonl << epoch_record_json(r).dump() << '\n';
    csv << metrics_csv_row(r) << '\n';
    for (Eigen::Index i = 0; i < acts.rows(); ++i) {
      actions << r.epoch << ',' << i;
      for (Eigen::Index k = 0; k < acts.cols(); ++k) actions << ',' << format_number(acts(i, k));
      actions << '\n';
    }
    detail::check_stream(jsonl, dir / "metrics.jsonl");
    detail::check_stream(csv, dir / "metrics.csv");
    detail::check_stream(actions, dir / "actions.csv");
  };
  auto result = run(cfg, obs);
  save_checkpoint((dir / "checkpoint.json").string(), result.model, result.reward);
  {
    json ev = json::object();
    if (result.evaluation) {
      ev = {{"episodes", result.evaluation->returns.size()},
            {"mean", result.evaluation->mean},
            {"std", result.evaluation->stddev},
            {"returns", result.evaluation->returns}};
    }
    auto out = detail::open_out(dir / "eval.json");
    out << ev.dump(2) << '\n';
    detail::check_stream(out, dir / "eval.json");
  }
  return {dir, std::move(result.records), std::move(result.evaluation)};
}

inline RunConfig load_run_config(const fs::path& dir) {
  std::ifstream in(dir / "config.json");
  if (!in) throw Error("no config.json in run directory " + dir.string());
  return from_json(json::parse(in));
}

// ---------------------------------------------------------------------------
// Ablation

struct Variant {
  std::string name;
  ScheduleMode mode;
  double beta_max;
};

/// {progressive, fixed(beta_max), off}, optionally followed by progressive
/// runs at each beta_max of a sweep.
inline std::vector<Variant> ablation_variants(double beta_max, const std::vector<double>& sweep, bool grid = true) {
  std::vector<Variant> v;
  if (grid) {
    v.push_back({"progressive", ScheduleMode::Progressive, beta_max});
    v.push_back({"fixed", ScheduleMode::Fixed, beta_max});
    v.push_back({"off", ScheduleMode::Off, beta_max});
  }
  for (double b : sweep) v.push_back({"progressive_bmax_" + format_number(b), ScheduleMode::Progressive, b});
  return v;
}

inline RunConfig apply_variant(RunConfig cfg, const Variant& v, std::uint64_t seed) {
  cfg.schedule.mode = v.mode;
  cfg.schedule.beta_max = v.beta_max;
  cfg.schedule.fixed_beta = v.beta_max;
  cfg.seed = seed;
  cfg.validate();
  return cfg;
}

struct VariantSummary {
  std::string name;
  int runs = 0;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation (n - 1)
};

inline VariantSummary summarize(const std::string& name, const std::vector<double>& values) {
  VariantSummary s{name, static_cast<int>(values.size())};
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    for (double v : values) s.stddev += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(s.stddev / static_cast<double>(values.size() - 1));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Action analysis

/// epoch -> executed actions (rows) read from a run's actions.csv.
inline std::map<int, Mat> read_actions(const fs::path& run_dir) {
  std::ifstream in(run_dir / "actions.csv");
  if (!in) throw Error("no actions.csv in run directory " + run_dir.string());
  std::string line;
  std::getline(in, line);
  std::map<int, std::vector<std::vector<double>>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
    if (vals.size() < 3) throw Error("malformed actions.csv line: " + line);
    rows[static_cast<int>(vals[0])].push_back(std::vector<double>(vals.begin() + 2, vals.end()));
  }
  std::map<int, Mat> out;
  for (auto& [epoch, r] : rows) {
    Mat m(static_cast<Eigen::Index>(r.size()), static_cast<Eigen::Index>(r.front().size()));
    for (std::size_t i = 0; i < r.size(); ++i)
      for (std::size_t k = 0; k < r[i].size(); ++k) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = r[i][k];
    out.emplace(epoch, std::move(m));
  }
  return out;
}

struct ActionAnalysis {
  int epoch = 0;
  PcaResult pca;
  std::vector<Mat> projections;  // per run, rows = that run's actions
  std::vector<double> bbox_areas;
};

/// Fits the top-2 PCA on the union of all runs' actions at `epoch` and
/// projects each run separately.
inline ActionAnalysis analyze_actions(const std::vector<std::map<int, Mat>>& runs, int epoch,
                                      const std::vector<std::string>& labels = {}) {
  ActionAnalysis a;
  a.epoch = epoch;
  Eigen::Index total = 0, cols = -1;
  for (std::size_t r = 0; r < runs.size(); ++r) {
    auto it = runs[r].find(epoch);
    if (it == runs[r].end()) {
      std::string avail;
      for (const auto& [e, m] : runs[r]) avail += (avail.empty() ? "" : ", ") + std::to_string(e);
      const auto label = r < labels.size() ? labels[r] : "run " + std::to_string(r);
      throw InvalidArgument("epoch " + std::to_string(epoch) + " not logged in " + label + "; available epochs: " + avail);
    }
    total += it->second.rows();
    if (cols >= 0 && cols != it->second.cols()) throw ShapeError("analyze_actions: action dimensions differ between runs");
    cols = it->second.cols();
  }
  Mat all(total, cols);
  Eigen::Index off = 0;
  for (const auto& run : runs) {
    const Mat& m = run.at(epoch);
    all.middleRows(off, m.rows()) = m;
    off += m.rows();
  }
  a.pca = pca_top2(all);
  off = 0;
  for (const auto& run : runs) {
    const auto n = run.at(epoch).rows();
    a.projections.push_back(a.pca.projected.middleRows(off, n));
    a.bbox_areas.push_back(bounding_box_area(a.projections.back()));
    off += n;
  }
  return a;
}

}  // namespace mope2
