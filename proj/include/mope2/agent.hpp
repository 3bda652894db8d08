#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mope2/dynamics.hpp"
#include "mope2/envs.hpp"
#include "mope2/errors.hpp"
#include "mope2/planner.hpp"
#include "mope2/rng.hpp"

namespace mope2 {

struct RunConfig {
  std::string preset = "desk";
  std::string env_name = "point_mass";
  nlohmann::json env_params = nlohmann::json::object();
  int env_horizon = 200;
  double env_process_noise = 0.0;

  std::vector<int> hidden{64, 64};
  int ensemble_size = 4;
  double logvar_min = -10.0;
  double logvar_max = 4.0;

  PlanConfig plan{};
  ExplorationSchedule schedule{};
  TrainConfig train{};

  int steps_per_epoch = 200;
  int total_epochs = 10;
  int warmup_epochs = 1;
  int eval_episodes = 1;
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  void validate() const {
    if (warmup_epochs < 1) throw InvalidArgument("run: warmup_epochs must be >= 1");
    if (total_epochs <= warmup_epochs) throw InvalidArgument("run: total_epochs must exceed warmup_epochs");
    if (steps_per_epoch < 1) throw InvalidArgument("run: steps_per_epoch must be >= 1");
    if (eval_episodes < 0) throw InvalidArgument("run: eval_episodes must be >= 0");
    if (ensemble_size < 1) throw InvalidArgument("model: ensemble_size must be >= 1");
    if (!(logvar_min < logvar_max)) throw InvalidArgument("model: logvar_min must be < logvar_max");
    if (train.epochs < 0 || train.reward_epochs < 0 || train.batch_size < 1)
      throw InvalidArgument("train: epochs must be >= 0 and batch_size >= 1");
    plan.validate();
    schedule.validate();
  }

  std::unique_ptr<Environment> make_env() const {
    nlohmann::json o = env_params;
    o["horizon"] = env_horizon;
    o["process_noise"] = env_process_noise;
    return make_environment(env_name, o);
  }

  ModelArchitecture architecture(const Environment& env) const {
    ModelArchitecture a;
    a.state_dim = env.state_dim();
    a.action_dim = env.action_dim();
    a.hidden = hidden;
    a.ensemble_size = ensemble_size;
    a.logvar = {logvar_min, logvar_max};
    return a;
  }
};

struct EpochRecord {
  int epoch = 0;
  double true_return = 0.0;  // sum of environment rewards collected this epoch
  int episodes_finished = 0;
  double beta = 0.0;
  bool planned = false;      // false for warmup epochs (random actions)
  double planner_best_return = std::numeric_limits<double>::quiet_NaN();  // mean over steps
  double planner_iterations = std::numeric_limits<double>::quiet_NaN();   // mean over steps
  double elite_return_mean = std::numeric_limits<double>::quiet_NaN();
  double elite_return_std = std::numeric_limits<double>::quiet_NaN();
  bool trained = false;
  long train_at_step = -1;   // global step count when training ran
  long gradient_steps = 0;
  std::vector<double> member_losses;
  double model_loss_mean = std::numeric_limits<double>::quiet_NaN();
  double reward_mse = std::numeric_limits<double>::quiet_NaN();
  std::size_t buffer_size = 0;
};

struct EvalResult {
  double mean = 0.0;
  double stddev = 0.0;
  std::vector<double> returns;
};

/// Runs full episodes with beta = 0 planning and reports the true return.
template <DynamicsModel M, RewardModel R>
EvalResult evaluate_policy(const M& model, const R& reward, Environment& env, int episodes, const PlanConfig& cfg,
                           const RngStream& rng) {
  if (episodes < 1) throw InvalidArgument("evaluate_policy: episodes must be >= 1");
  ExplorationSchedule greedy;
  greedy.mode = ScheduleMode::Off;
  const auto box = env.action_box();
  EvalResult res;
  for (int ep = 0; ep < episodes; ++ep) {
    auto reset_rng = rng.derive({0x65766cULL, static_cast<std::uint64_t>(ep)});
    Vec s = env.reset(reset_rng);
    double total = 0.0;
    for (long t = 0;; ++t) {
      const auto plan = plan_action(model, reward, s, 0, cfg, greedy, box,
                                    rng.derive({0x706c616eULL, static_cast<std::uint64_t>(ep), static_cast<std::uint64_t>(t)}));
      const auto step = env.step(plan.action);
      total += step.reward;
      s = step.next_state;
      if (step.done) break;
    }
    res.returns.push_back(total);
  }
  for (double r : res.returns) res.mean += r;
  res.mean /= static_cast<double>(res.returns.size());
  for (double r : res.returns) res.stddev += (r - res.mean) * (r - res.mean);
  res.stddev = std::sqrt(res.stddev / static_cast<double>(res.returns.size()));
  return res;
}

struct RunResult {
  std::vector<EpochRecord> records;
  std::vector<Mat> actions;  // per epoch: steps x action_dim, executed actions
  EnsembleModel model;
  RewardNet reward;
  ReplayBuffer buffer{1, 1};
  std::optional<EvalResult> evaluation;
};

struct RunObserver {
  std::function<void(const EpochRecord&, const Mat& actions)> on_epoch;
};

/// The interaction loop: warmup epochs with uniform random actions, then
/// entropy-bonus MPC; the model and reward net are refit on the whole buffer
/// at the end of every epoch once warmup data collection is done.
inline RunResult run(const RunConfig& cfg, const RunObserver& observer = {}) {
  cfg.validate();
  auto env = cfg.make_env();
  const auto arch = cfg.architecture(*env);
  const RngStream root(cfg.seed, 0);

  RunResult out;
  out.model = EnsembleModel(arch, root.derive({0x6d6f64656cULL}));
  out.reward = RewardNet(arch, root.derive({0x72657761ULL}));
  out.buffer = ReplayBuffer(env->state_dim(), env->action_dim());

  PlanConfig plan_cfg = cfg.plan;
  plan_cfg.workers = cfg.workers;
  const auto box = env->action_box();
  auto action_rng = root.derive({0x72616e64ULL});
  long global_step = 0;
  int episode = 0;
  auto reset_rng = root.derive({0x72657365ULL, static_cast<std::uint64_t>(episode)});
  Vec s = env->reset(reset_rng);

  for (int e = 0; e < cfg.total_epochs; ++e) {
    EpochRecord rec;
    rec.epoch = e;
    rec.beta = temperature(cfg.schedule, e);
    rec.planned = e >= cfg.warmup_epochs;
    Mat actions(cfg.steps_per_epoch, env->action_dim());
    double best_sum = 0.0, iter_sum = 0.0, elite_mean_sum = 0.0, elite_std_sum = 0.0;

    for (int i = 0; i < cfg.steps_per_epoch; ++i) {
      Vec a(env->action_dim());
      if (!rec.planned) {
        for (Eigen::Index k = 0; k < a.size(); ++k) a[k] = action_rng.uniform(box.low[k], box.high[k]);
      } else {
        PlanResult plan;
        try {
          plan = plan_action(out.model, out.reward, s, e, plan_cfg, cfg.schedule, box,
                             root.derive({0x706c616eULL, static_cast<std::uint64_t>(e), static_cast<std::uint64_t>(i)}));
        } catch (const PlanningFailure& err) {
          throw PlanningFailure(std::string(err.what()) + " (epoch " + std::to_string(e) + ", step " +
                                std::to_string(i) + ")");
        }
        a = plan.action;
        const auto& d = plan.diagnostics;
        best_sum += d.best_return;
        iter_sum += d.iterations_used;
        elite_mean_sum += d.iterations.back().elite_mean;
        elite_std_sum += d.iterations.back().elite_std;
      }
      const auto step = env->step(a);
      actions.row(i) = box.clip(a).transpose();
      out.buffer.add({s, box.clip(a), step.next_state, step.reward});
      rec.true_return += step.reward;
      ++global_step;
      s = step.next_state;
      if (step.done) {
        ++rec.episodes_finished;
        ++episode;
        reset_rng = root.derive({0x72657365ULL, static_cast<std::uint64_t>(episode)});
        s = env->reset(reset_rng);
      }
    }
    if (rec.planned) {
      const double n = cfg.steps_per_epoch;
      rec.planner_best_return = best_sum / n;
      rec.planner_iterations = iter_sum / n;
      rec.elite_return_mean = elite_mean_sum / n;
      rec.elite_return_std = elite_std_sum / n;
    }

    if (e >= cfg.warmup_epochs - 1) {
      const auto report = train_models(out.model, out.reward, out.buffer, cfg.train,
                                       root.derive({0x747261696eULL, static_cast<std::uint64_t>(e)}), cfg.workers);
      rec.trained = true;
      rec.train_at_step = global_step;
      rec.gradient_steps = report.gradient_steps;
      rec.member_losses = report.member_losses;
      double sum = 0.0;
      for (double l : report.member_losses) sum += l;
      rec.model_loss_mean = sum / static_cast<double>(report.member_losses.size());
      rec.reward_mse = report.reward_mse;
    }
    rec.buffer_size = out.buffer.size();
    if (observer.on_epoch) observer.on_epoch(rec, actions);
    out.records.push_back(std::move(rec));
    out.actions.push_back(std::move(actions));
  }

  if (cfg.eval_episodes > 0) {
    auto eval_env = cfg.make_env();
    out.evaluation = evaluate_policy(out.model, out.reward, *eval_env, cfg.eval_episodes, plan_cfg,
                                     root.derive({0x6576616cULL}));
  }
  return out;
}

}  // namespace mope2
