#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "mope2/dynamics.hpp"
#include "mope2/errors.hpp"
#include "mope2/gaussian.hpp"
#include "mope2/parallel.hpp"
#include "mope2/rng.hpp"

namespace mope2 {

/// Anything that predicts next-state Gaussians for a batch of (state, action)
/// columns, one ensemble member at a time.
template <typename M>
concept DynamicsModel = requires(const M& m, std::size_t member, const Mat& s, const Mat& a) {
  { m.num_members() } -> std::convertible_to<std::size_t>;
  { m.state_dim() } -> std::convertible_to<int>;
  { m.action_dim() } -> std::convertible_to<int>;
  { m.predict_batch(member, s, a) } -> std::same_as<BatchPrediction>;
};

template <typename R>
concept RewardModel = requires(const R& r, const Mat& s, const Mat& a) {
  { r.reward_batch(s, a) } -> std::same_as<Vec>;
};

struct ActionBox {
  Vec low;
  Vec high;

  static ActionBox symmetric(int dim, double bound) { return {Vec::Constant(dim, -bound), Vec::Constant(dim, bound)}; }
  int dim() const { return static_cast<int>(low.size()); }
  bool contains(const Vec& a) const {
    return ((a.array() >= low.array()) && (a.array() <= high.array())).all();
  }
  Vec clip(const Vec& a) const { return a.cwiseMax(low).cwiseMin(high); }
};

struct PlanConfig {
  int num_candidates = 500;  // K
  int horizon = 30;          // H
  int elite_count = 100;
  double alpha = 0.01;       // distribution smoothing rate
  int max_iterations = 20;
  double convergence_tol = 1e-3;
  double gamma = 1.0;
  double mu0 = 0.0;
  double sigma0 = 0.1;
  double variance_floor = 1e-6;
  bool fit_first_action_only = false;
  std::size_t workers = 1;

  void validate() const {
    if (num_candidates < 1) throw InvalidArgument("plan: num_candidates must be >= 1");
    if (horizon < 1) throw InvalidArgument("plan: horizon must be >= 1");
    if (elite_count < 1 || elite_count > num_candidates)
      throw InvalidArgument("plan: elite_count must be in [1, num_candidates]");
    if (!(alpha > 0.0 && alpha <= 1.0)) throw InvalidArgument("plan: alpha must be in (0, 1]");
    if (max_iterations < 1) throw InvalidArgument("plan: max_iterations must be >= 1");
    if (!(convergence_tol >= 0.0)) throw InvalidArgument("plan: convergence_tol must be >= 0");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw InvalidArgument("plan: gamma must be in [0, 1]");
    if (!(sigma0 > 0.0)) throw InvalidArgument("plan: sigma0 must be > 0");
    if (!(variance_floor > 0.0)) throw InvalidArgument("plan: variance_floor must be > 0");
  }
};

enum class ScheduleMode { Progressive, Fixed, Off };

inline std::string to_string(ScheduleMode m) {
  switch (m) {
    case ScheduleMode::Progressive: return "progressive";
    case ScheduleMode::Fixed: return "fixed";
    case ScheduleMode::Off: return "off";
  }
  return "?";
}

inline ScheduleMode schedule_mode_from_string(const std::string& s) {
  if (s == "progressive") return ScheduleMode::Progressive;
  if (s == "fixed") return ScheduleMode::Fixed;
  if (s == "off") return ScheduleMode::Off;
  throw InvalidArgument("unknown schedule mode '" + s + "' (expected progressive, fixed or off)");
}

struct ExplorationSchedule {
  double beta_min = 0.0;
  double beta_max = 1.0;
  int e_min = 50;
  int e_max = 300;
  ScheduleMode mode = ScheduleMode::Progressive;
  double fixed_beta = 1.0;

  void validate() const {
    if (!(e_min < e_max)) throw InvalidArgument("schedule: e_min must be < e_max");
    if (!(beta_min <= beta_max)) throw InvalidArgument("schedule: beta_min must be <= beta_max");
  }
};

/// Exploration temperature for an interaction epoch. The progressive mode is
/// a linear ramp from beta_min at e_min, clamped to [beta_min, beta_max].
inline double temperature(const ExplorationSchedule& s, int epoch) {
  if (epoch < 0) throw InvalidArgument("temperature: epoch must be >= 0");
  switch (s.mode) {
    case ScheduleMode::Off: return 0.0;
    case ScheduleMode::Fixed: return s.fixed_beta;
    case ScheduleMode::Progressive: {
      const double ramp = s.beta_min + static_cast<double>(epoch - s.e_min) / static_cast<double>(s.e_max - s.e_min);
      return std::min(std::max(ramp, s.beta_min), s.beta_max);
    }
  }
  return 0.0;
}

struct ImaginedTrajectory {
  Mat actions;          // action_dim x H
  Mat states;           // state_dim x H, column 0 is s0
  Vec extrinsic_rewards;
  Vec entropies;        // nats, entropy of the distribution that produced s_{t+1}
  double total_return = 0.0;
  bool valid = true;
  std::size_t member = 0;

  int horizon() const { return static_cast<int>(actions.cols()); }
};

/// Discounted sum of extrinsic reward plus beta-weighted predictive entropy.
inline double score(const ImaginedTrajectory& traj, double beta, double gamma) {
  if (!traj.valid) return -std::numeric_limits<double>::infinity();
  double total = 0.0;
  double discount = 1.0;
  for (Eigen::Index t = 0; t < traj.extrinsic_rewards.size(); ++t) {
    total += discount * (traj.extrinsic_rewards[t] + beta * traj.entropies[t]);
    discount *= gamma;
  }
  return total;
}

namespace detail {

// Rolls out a set of candidates that share one ensemble member. Each candidate
// draws its state noise from its own stream, so the outcome does not depend
// on which other candidates share the batch.
template <DynamicsModel M, RewardModel R>
void rollout_group(const M& model, const R& reward, const Vec& s0, std::span<ImaginedTrajectory*> group,
                   std::span<RngStream*> rngs) {
  const auto n = static_cast<Eigen::Index>(group.size());
  if (n == 0) return;
  const std::size_t member = group.front()->member;
  const int H = group.front()->horizon();
  const auto ds = s0.size();
  const auto da = group.front()->actions.rows();
  Mat s = s0.replicate(1, n);
  Mat a(da, n);
  for (int t = 0; t < H; ++t) {
    for (Eigen::Index j = 0; j < n; ++j) {
      a.col(j) = group[j]->actions.col(t);
      group[j]->states.col(t) = s.col(j);
    }
    const Vec r = reward.reward_batch(s, a);
    auto pred = model.predict_batch(member, s, a);
    for (Eigen::Index j = 0; j < n; ++j) {
      auto& tr = *group[j];
      tr.extrinsic_rewards[t] = r[j];
      tr.entropies[t] = diagonal_entropy_from_logvar(pred.logvar.col(j));
      if (t + 1 < H) {
        for (Eigen::Index i = 0; i < ds; ++i)
          s(i, j) = pred.mean(i, j) + std::exp(0.5 * pred.logvar(i, j)) * rngs[j]->normal();
      }
      if (!std::isfinite(tr.extrinsic_rewards[t]) || !std::isfinite(tr.entropies[t]) || !s.col(j).allFinite()) {
        tr.valid = false;
        s.col(j) = s0;  // keep the batch finite; the trajectory is discarded
      }
    }
  }
}

}  // namespace detail

/// Samples an imagined trajectory from one ensemble member. states[0] = s0;
/// states[t+1] is drawn from the member's prediction at (states[t], actions[t]).
template <DynamicsModel M, RewardModel R>
ImaginedTrajectory rollout(const M& model, const R& reward, const Vec& s0, const Mat& action_seq,
                           std::size_t member_index, RngStream& rng) {
  if (!s0.allFinite()) throw NumericError("rollout: non-finite initial state");
  if (member_index >= model.num_members()) throw InvalidArgument("rollout: member index out of range");
  if (s0.size() != model.state_dim() || action_seq.rows() != model.action_dim())
    throw ShapeError("rollout: dimensions do not match model");
  if (action_seq.cols() < 1) throw InvalidArgument("rollout: horizon must be >= 1");
  const auto H = action_seq.cols();
  ImaginedTrajectory tr{action_seq, Mat(s0.size(), H), Vec(H), Vec(H), 0.0, true, member_index};
  ImaginedTrajectory* group[] = {&tr};
  RngStream* rngs[] = {&rng};
  detail::rollout_group(model, reward, s0, std::span<ImaginedTrajectory*>(group), std::span<RngStream*>(rngs));
  return tr;
}

/// Per-timestep Gaussian over an H-step action sequence.
struct ActionSequenceDistribution {
  Mat mean;      // action_dim x H
  Mat variance;  // action_dim x H

  static ActionSequenceDistribution initial(int action_dim, const PlanConfig& cfg) {
    return {Mat::Constant(action_dim, cfg.horizon, cfg.mu0),
            Mat::Constant(action_dim, cfg.horizon, std::max(cfg.sigma0 * cfg.sigma0, cfg.variance_floor))};
  }
};

struct EliteFit {
  Mat mean;
  Mat variance;
};

/// Sample mean and (population) variance of elite action sequences.
inline EliteFit fit_elites(std::span<const Mat* const> elites) {
  if (elites.empty()) throw InvalidArgument("fit_elites: no elites");
  EliteFit f{Mat::Zero(elites.front()->rows(), elites.front()->cols()), Mat()};
  for (const auto* e : elites) f.mean += *e;
  f.mean /= static_cast<double>(elites.size());
  f.variance = Mat::Zero(f.mean.rows(), f.mean.cols());
  for (const auto* e : elites) f.variance += (*e - f.mean).cwiseAbs2();
  f.variance /= static_cast<double>(elites.size());
  return f;
}

/// mu <- (1 - alpha) mu + alpha mu', Sigma <- (1 - alpha) Sigma + alpha Sigma',
/// with the variance floored. `columns` limits the update to the first n steps.
inline void smooth_update(ActionSequenceDistribution& dist, const EliteFit& fit, double alpha, double floor,
                          Eigen::Index columns = -1) {
  const auto n = columns < 0 ? dist.mean.cols() : columns;
  dist.mean.leftCols(n) = (1.0 - alpha) * dist.mean.leftCols(n) + alpha * fit.mean.leftCols(n);
  dist.variance.leftCols(n) = ((1.0 - alpha) * dist.variance.leftCols(n) + alpha * fit.variance.leftCols(n))
                                  .cwiseMax(floor);
}

/// Indices of the top-`count` returns; ties go to the lower index.
inline std::vector<std::size_t> select_elites(const std::vector<double>& returns, std::size_t count) {
  std::vector<std::size_t> idx(returns.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return returns[a] > returns[b]; });
  idx.resize(std::min(count, idx.size()));
  return idx;
}

struct IterationStats {
  double best_return = 0.0;
  double elite_mean = 0.0;
  double elite_std = 0.0;
  int valid_candidates = 0;
  Mat elite_action_mean;  // mu' of this iteration
};

struct PlanDiagnostics {
  int epoch = 0;
  double beta = 0.0;
  int iterations_used = 0;
  double best_return = -std::numeric_limits<double>::infinity();
  std::vector<IterationStats> iterations;
  ActionSequenceDistribution final_distribution;
  ImaginedTrajectory best_trajectory;
};

struct PlanResult {
  Vec action;
  PlanDiagnostics diagnostics;
};

/// Candidates are rolled out in fixed index blocks so that floating-point
/// results are identical for any worker count.
inline constexpr std::size_t kRolloutBlock = 32;

/// Entropy-bonus CEM model-predictive control: returns the first action of
/// the best imagined trajectory found.
template <DynamicsModel M, RewardModel R>
PlanResult plan_action(const M& model, const R& reward, const Vec& s0, int epoch, const PlanConfig& cfg,
                       const ExplorationSchedule& schedule, const ActionBox& box, const RngStream& rng) {
  cfg.validate();
  if (!s0.allFinite()) throw NumericError("plan_action: non-finite state");
  if (s0.size() != model.state_dim()) throw ShapeError("plan_action: state dimension mismatch");
  const int da = model.action_dim();
  if (box.dim() != da) throw ShapeError("plan_action: action box dimension mismatch");

  const double beta = temperature(schedule, epoch);
  const auto K = static_cast<std::size_t>(cfg.num_candidates);
  const int H = cfg.horizon;
  const std::size_t B = model.num_members();

  PlanResult result;
  auto& diag = result.diagnostics;
  diag.epoch = epoch;
  diag.beta = beta;
  auto dist = ActionSequenceDistribution::initial(da, cfg);
  double prev_best = -std::numeric_limits<double>::infinity();

  std::vector<ImaginedTrajectory> cands(K);
  std::vector<double> returns(K);

  for (int it = 0; it < cfg.max_iterations; ++it) {
    const Mat stddev = dist.variance.cwiseSqrt();
    const std::size_t blocks = (K + kRolloutBlock - 1) / kRolloutBlock;
    parallel_for(blocks, cfg.workers, [&](std::size_t blk) {
      const std::size_t lo = blk * kRolloutBlock;
      const std::size_t hi = std::min(K, lo + kRolloutBlock);
      std::vector<RngStream> streams;
      streams.reserve(hi - lo);
      for (std::size_t k = lo; k < hi; ++k) {
        streams.push_back(rng.derive({static_cast<std::uint64_t>(it), static_cast<std::uint64_t>(k)}));
        auto& stream = streams.back();
        auto& c = cands[k];
        c.member = stream.index(B);
        c.actions.resize(da, H);
        for (int t = 0; t < H; ++t)
          for (int i = 0; i < da; ++i) c.actions(i, t) = dist.mean(i, t) + stddev(i, t) * stream.normal();
        for (int t = 0; t < H; ++t) c.actions.col(t) = box.clip(c.actions.col(t));
        c.states.resize(s0.size(), H);
        c.extrinsic_rewards.resize(H);
        c.entropies.resize(H);
        c.valid = true;
      }
      for (std::size_t m = 0; m < B; ++m) {
        std::vector<ImaginedTrajectory*> group;
        std::vector<RngStream*> group_rng;
        for (std::size_t k = lo; k < hi; ++k) {
          if (cands[k].member == m) {
            group.push_back(&cands[k]);
            group_rng.push_back(&streams[k - lo]);
          }
        }
        detail::rollout_group(model, reward, s0, std::span<ImaginedTrajectory*>(group),
                              std::span<RngStream*>(group_rng));
      }
      for (std::size_t k = lo; k < hi; ++k) {
        cands[k].total_return = score(cands[k], beta, cfg.gamma);
        returns[k] = cands[k].total_return;
      }
    });

    IterationStats st;
    st.valid_candidates =
        static_cast<int>(std::count_if(cands.begin(), cands.end(), [](const auto& c) { return c.valid; }));
    if (st.valid_candidates == 0) {
      if (it == 0)
        throw PlanningFailure("plan_action: all " + std::to_string(K) + " candidate trajectories diverged");
      break;
    }
    const auto elites = select_elites(returns, static_cast<std::size_t>(cfg.elite_count));
    std::vector<const Mat*> elite_actions;
    double sum = 0.0, sumsq = 0.0;
    int finite_elites = 0;
    for (auto k : elites) {
      if (!cands[k].valid) continue;
      elite_actions.push_back(&cands[k].actions);
      sum += returns[k];
      sumsq += returns[k] * returns[k];
      ++finite_elites;
    }
    st.best_return = returns[elites.front()];
    st.elite_mean = sum / finite_elites;
    st.elite_std = std::sqrt(std::max(0.0, sumsq / finite_elites - st.elite_mean * st.elite_mean));

    if (st.best_return > diag.best_return) {
      diag.best_return = st.best_return;
      diag.best_trajectory = cands[elites.front()];
    }

    const auto fit = fit_elites(elite_actions);
    st.elite_action_mean = fit.mean;
    smooth_update(dist, fit, cfg.alpha, cfg.variance_floor, cfg.fit_first_action_only ? 1 : -1);
    diag.iterations.push_back(std::move(st));
    diag.iterations_used = it + 1;

    const double best_now = diag.iterations.back().best_return;
    if (it > 0 && best_now - prev_best < cfg.convergence_tol) break;
    prev_best = best_now;
  }

  diag.final_distribution = std::move(dist);
  result.action = diag.best_trajectory.actions.col(0);
  return result;
}

}  // namespace mope2
