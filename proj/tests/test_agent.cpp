#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "mope2/agent.hpp"
#include "mope2/config.hpp"
#include "mope2/harness.hpp"

namespace {

using namespace mope2;
namespace fs = std::filesystem;

RunConfig tiny_config(const std::string& env = "pendulum") {
  RunConfig c = resolve_config({{"env", {{"name", env}, {"horizon", 20}}}});
  c.hidden = {8, 8};
  c.ensemble_size = 2;
  c.plan.num_candidates = 20;
  c.plan.elite_count = 4;
  c.plan.horizon = 5;
  c.plan.max_iterations = 2;
  c.train.epochs = 2;
  c.train.reward_epochs = 2;
  c.steps_per_epoch = 30;
  c.total_epochs = 4;
  c.warmup_epochs = 2;
  c.eval_episodes = 1;
  c.schedule.e_min = 1;
  c.schedule.e_max = 3;
  return c;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(Run, CountsEpochsStepsAndEpisodes) {
  const auto cfg = tiny_config();
  const auto res = run(cfg);
  ASSERT_EQ(res.records.size(), 4u);
  EXPECT_EQ(res.buffer.size(), 120u);
  int episodes = 0;
  for (const auto& r : res.records) episodes += r.episodes_finished;
  EXPECT_EQ(episodes, 120 / 20);
  EXPECT_EQ(res.actions.size(), 4u);
  EXPECT_EQ(res.actions[0].rows(), 30);
  EXPECT_EQ(res.records.back().buffer_size, 120u);
}

TEST(Run, BetaTraceFollowsSchedule) {
  const auto cfg = tiny_config();
  const auto res = run(cfg);
  for (const auto& r : res.records) EXPECT_EQ(r.beta, temperature(cfg.schedule, r.epoch));
  EXPECT_EQ(res.records[1].beta, 0.0);
  EXPECT_EQ(res.records[2].beta, 0.5);
  EXPECT_EQ(res.records[3].beta, 1.0);
}

TEST(Run, NoTrainingBeforeWarmupCompletes) {
  const auto cfg = tiny_config();
  const auto res = run(cfg);
  for (const auto& r : res.records) {
    if (r.epoch < cfg.warmup_epochs) EXPECT_FALSE(r.planned);
    if (r.trained) {
      EXPECT_GE(r.train_at_step, static_cast<long>(cfg.warmup_epochs) * cfg.steps_per_epoch);
      EXPECT_GT(r.gradient_steps, 0);
    } else {
      EXPECT_EQ(r.gradient_steps, 0);
    }
  }
  EXPECT_FALSE(res.records[0].trained);
  EXPECT_TRUE(res.records[1].trained);
}

TEST(Run, WarmupActionsAreUniformInTheBox) {
  auto cfg = tiny_config("point_mass");
  const auto res = run(cfg);
  const Mat& a = res.actions[0];
  EXPECT_LE(a.maxCoeff(), 1.0);
  EXPECT_GE(a.minCoeff(), -1.0);
  EXPECT_NEAR(a.mean(), 0.0, 0.25);
}

TEST(Run, IdenticalAcrossRepeatsAndWorkerCounts) {
  auto cfg = tiny_config();
  const auto a = run(cfg);
  const auto b = run(cfg);
  cfg.workers = 3;
  const auto c = run(cfg);
  for (std::size_t e = 0; e < a.records.size(); ++e) {
    EXPECT_EQ(metrics_csv_row(a.records[e]), metrics_csv_row(b.records[e]));
    EXPECT_EQ(metrics_csv_row(a.records[e]), metrics_csv_row(c.records[e]));
    EXPECT_EQ(a.actions[e], c.actions[e]);
  }
  EXPECT_EQ(a.evaluation->mean, c.evaluation->mean);
}

TEST(Run, DifferentSeedsDiffer) {
  auto cfg = tiny_config();
  const auto a = run(cfg);
  cfg.seed = 1;
  EXPECT_NE(a.records[0].true_return, run(cfg).records[0].true_return);
}

TEST(EvaluatePolicy, SingleEpisodeHasZeroSpread) {
  PendulumSwingUp env;
  env.set_horizon(10);
  TrueDynamicsModel m(env);
  PlanConfig cfg;
  cfg.num_candidates = 20;
  cfg.elite_count = 4;
  cfg.horizon = 3;
  cfg.max_iterations = 2;
  const auto r = evaluate_policy(m, m, env, 1, cfg, RngStream(0, 0));
  ASSERT_EQ(r.returns.size(), 1u);
  EXPECT_EQ(r.stddev, 0.0);
  EXPECT_EQ(r.mean, r.returns[0]);
  EXPECT_THROW(evaluate_policy(m, m, env, 0, cfg, RngStream(0, 0)), InvalidArgument);
}

// Random-action baseline on the same episodes, for comparison with planning.
double random_baseline(Environment& env, int episodes, std::uint64_t seed) {
  double total = 0.0;
  RngStream rng(seed, 1);
  for (int ep = 0; ep < episodes; ++ep) {
    auto reset = RngStream(seed, 0).derive({0x65766cULL, static_cast<std::uint64_t>(ep)});
    env.reset(reset);
    const auto box = env.action_box();
    while (true) {
      Vec a(env.action_dim());
      for (Eigen::Index k = 0; k < a.size(); ++k) a[k] = rng.uniform(box.low[k], box.high[k]);
      const auto s = env.step(a);
      total += s.reward;
      if (s.done) break;
    }
  }
  return total / episodes;
}

TEST(EvaluatePolicy, PerfectModelBeatsRandomActionsOnPendulum) {
  PendulumSwingUp env;
  env.set_horizon(100);
  TrueDynamicsModel m(env);
  PlanConfig cfg;
  cfg.num_candidates = 100;
  cfg.elite_count = 10;
  cfg.horizon = 20;
  cfg.alpha = 0.5;
  cfg.sigma0 = 1.0;
  cfg.max_iterations = 4;
  const int episodes = 4;
  const auto planned = evaluate_policy(m, m, env, episodes, cfg, RngStream(0, 0));
  const double random = random_baseline(env, episodes, 0);
  // Margin from a pilot: planning with the true model roughly halves the cost.
  EXPECT_GT(planned.mean, random + 0.3 * std::abs(random)) << "planned " << planned.mean << " random " << random;
}

TEST(RunConfig, ValidationErrors) {
  auto c = tiny_config();
  c.warmup_epochs = 0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = tiny_config();
  c.total_epochs = c.warmup_epochs;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = tiny_config();
  c.schedule.e_max = c.schedule.e_min;
  EXPECT_THROW(c.validate(), InvalidArgument);
}

TEST(Harness, RunDirectoryArtifactsAndDeterministicCsv) {
  const auto root = fs::temp_directory_path() / "mope2_harness_test";
  fs::remove_all(root);
  auto cfg = tiny_config();
  run_to_directory(cfg, root / "a", "a");
  cfg.workers = 2;
  run_to_directory(cfg, root / "b", "b");
  for (const char* f : {"config.json", "manifest.json", "metrics.jsonl", "metrics.csv", "actions.csv",
                        "checkpoint.json", "eval.json"})
    EXPECT_TRUE(fs::exists(root / "a" / f)) << f;
  const auto csv = read_file(root / "a" / "metrics.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kMetricsCsvHeader);
  EXPECT_EQ(csv, read_file(root / "b" / "metrics.csv"));
  EXPECT_EQ(read_file(root / "a" / "actions.csv"), read_file(root / "b" / "actions.csv"));

  const auto loaded = load_run_config(root / "a");
  EXPECT_EQ(to_json(loaded).dump(), to_json(tiny_config()).dump());

  // A warmup epoch has no planner return, which shows up as an empty cell.
  std::istringstream lines(csv);
  std::string header, first;
  std::getline(lines, header);
  std::getline(lines, first);
  EXPECT_EQ(first.back(), ',');

  const auto actions = read_actions(root / "a");
  ASSERT_EQ(actions.size(), 4u);
  EXPECT_EQ(actions.at(3).rows(), 30);
  fs::remove_all(root);
}

TEST(Harness, AnalyzeActionsProjectsEachRun) {
  RngStream rng(1, 1);
  std::map<int, Mat> wide, narrow;
  wide[5] = Mat(40, 2);
  narrow[5] = Mat(40, 2);
  for (int i = 0; i < 40; ++i) {
    wide[5].row(i) << rng.uniform(-1, 1), rng.uniform(-1, 1);
    narrow[5].row(i) << 0.1 * rng.uniform(-1, 1), 0.1 * rng.uniform(-1, 1);
  }
  const auto a = analyze_actions({wide, narrow}, 5);
  ASSERT_EQ(a.projections.size(), 2u);
  EXPECT_GT(a.bbox_areas[0], a.bbox_areas[1]);
  try {
    analyze_actions({wide, narrow}, 7, {"wide", "narrow"});
    FAIL() << "expected InvalidArgument";
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("available epochs: 5"), std::string::npos);
  }
}

TEST(Harness, SummaryUsesSampleStandardDeviation) {
  const auto s = summarize("x", {1.0, 2.0, 3.0, 4.0});
  EXPECT_EQ(s.runs, 4);
  EXPECT_EQ(s.mean, 2.5);
  EXPECT_NEAR(s.stddev, std::sqrt(5.0 / 3.0), 1e-15);
}

TEST(Harness, AblationVariants) {
  const auto v = ablation_variants(1.0, {0.25, 2.0}, true);
  ASSERT_EQ(v.size(), 5u);
  EXPECT_EQ(v[0].mode, ScheduleMode::Progressive);
  EXPECT_EQ(v.back().beta_max, 2.0);
  EXPECT_EQ(ablation_variants(1.0, {0.5}, false).size(), 1u);
  const auto cfg = apply_variant(tiny_config(), v[2], 9);
  EXPECT_EQ(cfg.seed, 9u);
  EXPECT_EQ(cfg.schedule.mode, v[2].mode);
}

TEST(Harness, NumberFormattingRoundTrips) {
  for (double x : {0.1, -1.0 / 3.0, 1e-300, 12345.678}) EXPECT_EQ(std::stod(format_number(x)), x);
  EXPECT_EQ(format_number(std::nan("")), "");
}

}  // namespace
