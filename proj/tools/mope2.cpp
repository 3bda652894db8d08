// Command-line front end: train, eval, ablate, verify-bound, analyze-actions.
//
// Exit codes: 0 success, 1 usage/config error, 2 runtime failure,
// 3 bound violation (verify-bound only).

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mope2/config.hpp"
#include "mope2/harness.hpp"
#include "mope2/theory.hpp"

namespace {

using namespace mope2;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitViolation = 3;

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
}

std::string default_run_id(const RunConfig& cfg) {
  std::ostringstream os;
  os << cfg.env_name << "_" << to_string(cfg.schedule.mode);
  return os.str();
}

struct TrainArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::vector<std::uint64_t> seeds;
  std::string out;
  std::string run_id;
  std::size_t workers = 0;
};

int cmd_train(const TrainArgs& a) {
  auto cfg = resolve_config(read_json_file(a.config), a.overrides);
  if (a.workers > 0) cfg.workers = a.workers;
  std::vector<std::uint64_t> seeds = a.seeds.empty() ? std::vector<std::uint64_t>{cfg.seed} : a.seeds;
  const auto run_id = a.run_id.empty() ? default_run_id(cfg) : a.run_id;
  const auto root = output_root(a.out) / run_id;
  for (auto seed : seeds) {
    auto c = cfg;
    c.seed = seed;
    const auto dir = root / ("seed_" + std::to_string(seed));
    const auto art = run_to_directory(c, dir, run_id);
    std::cout << dir.string();
    if (art.evaluation) std::cout << "  eval_return=" << format_number(art.evaluation->mean);
    std::cout << '\n';
  }
  return kExitOk;
}

int cmd_eval(const std::string& run_dir, int episodes, std::uint64_t seed) {
  const auto cfg = load_run_config(run_dir);
  const auto ckpt = load_checkpoint((fs::path(run_dir) / "checkpoint.json").string());
  auto env = cfg.make_env();
  auto plan = cfg.plan;
  plan.workers = cfg.workers;
  const auto res = evaluate_policy(ckpt.model, ckpt.reward, *env, episodes > 0 ? episodes : std::max(1, cfg.eval_episodes),
                                   plan, RngStream(seed, 0x6576616cULL));
  std::cout << json{{"run", run_dir}, {"episodes", res.returns.size()}, {"mean", res.mean}, {"std", res.stddev},
                    {"returns", res.returns}}
                   .dump()
            << '\n';
  return kExitOk;
}

struct AblateArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::vector<std::uint64_t> seeds{0, 1};
  std::vector<double> sweep;
  bool no_grid = false;
  std::string out;
  std::string run_id = "ablation";
};

int cmd_ablate(const AblateArgs& a) {
  const auto base = resolve_config(read_json_file(a.config), a.overrides);
  const auto variants = ablation_variants(base.schedule.beta_max, a.sweep, !a.no_grid);
  if (variants.empty()) throw ConfigError("ablate: nothing to run (grid disabled and no sweep given)");
  const auto root = output_root(a.out) / a.run_id;
  fs::create_directories(root);
  std::ofstream runs_csv(root / "runs.csv");
  if (!runs_csv) throw Error("cannot write " + (root / "runs.csv").string());
  runs_csv << "variant,mode,beta_max,seed,final_eval_return,run_dir\n";
  std::vector<VariantSummary> summaries;
  for (const auto& v : variants) {
    std::vector<double> finals;
    for (auto seed : a.seeds) {
      const auto cfg = apply_variant(base, v, seed);
      const auto dir = root / v.name / ("seed_" + std::to_string(seed));
      const auto art = run_to_directory(cfg, dir, a.run_id + "/" + v.name);
      const double ret = art.evaluation ? art.evaluation->mean : std::numeric_limits<double>::quiet_NaN();
      finals.push_back(ret);
      runs_csv << v.name << ',' << to_string(v.mode) << ',' << format_number(v.beta_max) << ',' << seed << ','
               << format_number(ret) << ',' << dir.string() << '\n';
      std::cerr << v.name << " seed " << seed << ": " << format_number(ret) << '\n';
    }
    summaries.push_back(summarize(v.name, finals));
  }
  if (!runs_csv.flush()) throw Error("write failed: runs.csv");
  std::ofstream sum(root / "summary.csv");
  sum << "variant,runs,mean_final_eval_return,std_final_eval_return\n";
  std::cout << "variant,runs,mean,std\n";
  for (const auto& s : summaries) {
    sum << s.name << ',' << s.runs << ',' << format_number(s.mean) << ',' << format_number(s.stddev) << '\n';
    std::cout << s.name << ',' << s.runs << ',' << format_number(s.mean) << ',' << format_number(s.stddev) << '\n';
  }
  if (!sum.flush()) throw Error("write failed: summary.csv");
  return kExitOk;
}

struct VerifyArgs {
  int instances = 1000;
  std::uint64_t seed = 1;
  double gamma = -1.0;
  int max_states = 8;
  int max_actions = 4;
  int max_horizon = 10;
  std::string csv;
  std::string sweep_csv;
};

int cmd_verify_bound(const VerifyArgs& a) {
  if (a.gamma >= 1.0) throw ConfigError("--gamma must be < 1: the bound is undefined at gamma = 1");
  if (a.gamma > -1.0 && a.gamma < 0.0) throw ConfigError("--gamma must be in [0, 1)");
  if (a.instances < 1) throw ConfigError("--instances must be >= 1");
  tabular::StressConfig sc;
  sc.max_states = a.max_states;
  sc.max_actions = a.max_actions;
  sc.max_horizon = a.max_horizon;
  if (a.gamma >= 0.0) sc.gammas = {a.gamma};

  std::ofstream csv;
  if (!a.csv.empty()) {
    csv.open(a.csv);
    if (!csv) throw Error("cannot write " + a.csv);
    csv << "instance,states,actions,horizon,gamma,mix_weight,reward_amplitude,greedy_policy,tree_error,bound_value,"
           "epsilon_r_max,epsilon_m,r_max,reward_gap_term,model_error_term,holds,epsilon_m_marginal\n";
  }
  int failures = 0, zero = 0;
  double max_ratio = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < a.instances; ++i) {
    RngStream rng(a.seed, static_cast<std::uint64_t>(i));
    const auto in = tabular::random_instance(rng, sc);
    const auto r = tabular::verify_bound(in.mdp, in.model, in.policy, in.s0, in.a0, in.horizon);
    if (!r.holds) ++failures;
    if (r.bound_value == 0.0) ++zero;
    else max_ratio = std::max(max_ratio, r.tree_error / r.bound_value);
    if (csv.is_open()) {
      csv << i << ',' << in.mdp.num_states() << ',' << in.mdp.num_actions() << ',' << in.horizon << ','
          << format_number(in.mdp.gamma) << ',' << format_number(in.mix_weight) << ','
          << format_number(in.reward_amplitude) << ',' << (in.greedy ? 1 : 0) << ',' << format_number(r.tree_error)
          << ',' << format_number(r.bound_value) << ',' << format_number(r.epsilon_r_max) << ','
          << format_number(r.epsilon_m) << ',' << format_number(r.r_max) << ',' << format_number(r.reward_gap_term)
          << ',' << format_number(r.model_error_term) << ',' << (r.holds ? 1 : 0) << ','
          << format_number(r.epsilon_m_marginal) << '\n';
    }
  }
  if (csv.is_open() && !csv.flush()) throw Error("write failed: " + a.csv);

  if (!a.sweep_csv.empty()) {
    tabular::SweepConfig sw;
    sw.seed = a.seed;
    sw.max_states = a.max_states;
    sw.max_actions = a.max_actions;
    if (a.gamma >= 0.0) sw.gammas = {a.gamma};
    std::ofstream out(a.sweep_csv);
    if (!out) throw Error("cannot write " + a.sweep_csv);
    out << "gamma,horizon,scale,instances,zero_cases,violations,mean_tree_error,mean_abs_tree_error,mean_ratio,max_ratio\n";
    for (const auto& row : tabular::tightness_sweep(sw)) {
      out << format_number(row.gamma) << ',' << row.horizon << ',' << format_number(row.scale) << ',' << row.instances
          << ',' << row.zero_cases << ',' << row.violations << ',' << format_number(row.mean_tree_error) << ','
          << format_number(row.mean_abs_tree_error) << ',' << format_number(row.mean_ratio) << ','
          << format_number(row.max_ratio) << '\n';
    }
    if (!out.flush()) throw Error("write failed: " + a.sweep_csv);
  }

  std::cout << "instances=" << a.instances << " failures=" << failures << " zero_bound_cases=" << zero
            << " max_ratio=" << format_number(max_ratio) << '\n';
  return failures == 0 ? kExitOk : kExitViolation;
}

int cmd_analyze(const std::vector<std::string>& run_dirs, const std::vector<int>& epochs, const std::string& out_dir) {
  std::vector<std::map<int, Mat>> runs;
  for (const auto& d : run_dirs) runs.push_back(read_actions(d));
  std::vector<int> todo = epochs;
  if (todo.empty()) {
    int last = std::numeric_limits<int>::max();
    for (const auto& r : runs) last = std::min(last, r.empty() ? -1 : r.rbegin()->first);
    todo.push_back(last);
  }
  const fs::path out = out_dir.empty() ? fs::path("analysis") : fs::path(out_dir);
  for (int e : todo) {
    const auto res = analyze_actions(runs, e, run_dirs);
    const auto dir = out / ("epoch_" + std::to_string(e));
    fs::create_directories(dir);
    json summary = {{"epoch", e},
                    {"explained_variance_ratio", {res.pca.explained_ratio[0], res.pca.explained_ratio[1]}},
                    {"eigenvalues", std::vector<double>(res.pca.eigenvalues.data(),
                                                        res.pca.eigenvalues.data() + res.pca.eigenvalues.size())},
                    {"component_1", std::vector<double>(res.pca.component1.data(),
                                                        res.pca.component1.data() + res.pca.component1.size())},
                    {"component_2", std::vector<double>(res.pca.component2.data(),
                                                        res.pca.component2.data() + res.pca.component2.size())},
                    {"runs", json::array()}};
    for (std::size_t r = 0; r < runs.size(); ++r) {
      const auto file = "projection_" + std::to_string(r) + ".csv";
      std::ofstream p(dir / file);
      p << "pc1,pc2\n";
      for (Eigen::Index i = 0; i < res.projections[r].rows(); ++i)
        p << format_number(res.projections[r](i, 0)) << ',' << format_number(res.projections[r](i, 1)) << '\n';
      if (!p.flush()) throw Error("write failed: " + (dir / file).string());
      summary["runs"].push_back({{"run", run_dirs[r]}, {"projection", file}, {"bbox_area", res.bbox_areas[r]}});
    }
    std::ofstream s(dir / "pca.json");
    s << summary.dump(2) << '\n';
    if (!s.flush()) throw Error("write failed: pca.json");
    std::cout << dir.string() << '\n';
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Model-based RL with entropy-bonus CEM planning and a tabular error-bound verifier"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Run the interaction loop, one run directory per seed");
  train_cmd->add_option("-c,--config", train.config, "JSON configuration file")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("-s,--set", train.overrides, "Dotted-key override, e.g. schedule.mode=off");
  train_cmd->add_option("--seeds", train.seeds, "Seeds to run")->delimiter(',');
  train_cmd->add_option("-o,--out", train.out, "Output root (default $MOPE2_OUTPUT_ROOT or ./runs)");
  train_cmd->add_option("--run-id", train.run_id, "Run id (subdirectory of the output root)");
  train_cmd->add_option("-j,--workers", train.workers, "Worker threads for planning/training");

  std::string eval_run;
  int eval_episodes = 0;
  std::uint64_t eval_seed = 0;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a trained run's checkpoint with beta = 0 planning");
  eval_cmd->add_option("run_dir", eval_run, "Run directory")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("-n,--episodes", eval_episodes, "Episodes (default: run.eval_episodes)");
  eval_cmd->add_option("--seed", eval_seed, "Evaluation seed");

  AblateArgs ablate;
  auto* ablate_cmd = app.add_subcommand("ablate", "Compare progressive / fixed / off exploration (and beta_max sweeps)");
  ablate_cmd->add_option("-c,--config", ablate.config, "JSON configuration file")->required()->check(CLI::ExistingFile);
  ablate_cmd->add_option("-s,--set", ablate.overrides, "Dotted-key override");
  ablate_cmd->add_option("--seeds", ablate.seeds, "Seeds per variant")->delimiter(',');
  ablate_cmd->add_option("--beta-max-sweep", ablate.sweep, "Additional progressive runs at these beta_max values")
      ->delimiter(',');
  ablate_cmd->add_flag("--no-grid", ablate.no_grid, "Skip the progressive/fixed/off grid");
  ablate_cmd->add_option("-o,--out", ablate.out, "Output root");
  ablate_cmd->add_option("--run-id", ablate.run_id, "Run id");

  VerifyArgs verify;
  auto* verify_cmd = app.add_subcommand("verify-bound", "Check the return-gap bound on random tabular MDPs");
  verify_cmd->add_option("-n,--instances", verify.instances, "Number of random instances");
  verify_cmd->add_option("--seed", verify.seed, "Generator seed");
  verify_cmd->add_option("--gamma", verify.gamma, "Fix the discount (default: random in {0.9, 0.99})");
  verify_cmd->add_option("--max-states", verify.max_states);
  verify_cmd->add_option("--max-actions", verify.max_actions);
  verify_cmd->add_option("--max-horizon", verify.max_horizon);
  verify_cmd->add_option("--csv", verify.csv, "Write one row per instance");
  verify_cmd->add_option("--sweep", verify.sweep_csv, "Also run the tightness sweep and write it here");

  std::vector<std::string> analyze_runs;
  std::vector<int> analyze_epochs;
  std::string analyze_out;
  auto* analyze_cmd = app.add_subcommand("analyze-actions", "2D PCA projection of executed actions across runs");
  analyze_cmd->add_option("runs", analyze_runs, "Run directories")->required();
  analyze_cmd->add_option("-e,--epochs", analyze_epochs, "Epochs (default: last common epoch)")->delimiter(',');
  analyze_cmd->add_option("-o,--out", analyze_out, "Output directory (default ./analysis)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train_cmd) return cmd_train(train);
    if (*eval_cmd) return cmd_eval(eval_run, eval_episodes, eval_seed);
    if (*ablate_cmd) return cmd_ablate(ablate);
    if (*verify_cmd) return cmd_verify_bound(verify);
    if (*analyze_cmd) return cmd_analyze(analyze_runs, analyze_epochs, analyze_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const InvalidArgument& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
