#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "mope2/errors.hpp"
#include "mope2/rng.hpp"

namespace mope2::tabular {

/// Dense S x A x S transition tensor, row-major in (s, a, s').
struct TransitionTensor {
  int num_states = 0;
  int num_actions = 0;
  std::vector<double> p;

  TransitionTensor() = default;
  TransitionTensor(int S, int A) : num_states(S), num_actions(A), p(static_cast<std::size_t>(S) * A * S, 0.0) {}

  double& operator()(int s, int a, int sn) { return p[(static_cast<std::size_t>(s) * num_actions + a) * num_states + sn]; }
  double operator()(int s, int a, int sn) const {
    return p[(static_cast<std::size_t>(s) * num_actions + a) * num_states + sn];
  }
  const double* row(int s, int a) const { return &p[(static_cast<std::size_t>(s) * num_actions + a) * num_states]; }
  double* row(int s, int a) { return &p[(static_cast<std::size_t>(s) * num_actions + a) * num_states]; }

  void validate(const char* what) const {
    if (num_states < 1 || num_actions < 1) throw InvalidArgument(std::string(what) + ": empty state or action set");
    if (p.size() != static_cast<std::size_t>(num_states) * num_actions * num_states)
      throw ShapeError(std::string(what) + ": transition tensor has wrong size");
    for (int s = 0; s < num_states; ++s)
      for (int a = 0; a < num_actions; ++a) {
        double sum = 0.0;
        for (int sn = 0; sn < num_states; ++sn) {
          const double v = (*this)(s, a, sn);
          if (!(v >= 0.0)) throw InvalidArgument(std::string(what) + ": negative transition probability");
          sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-12) throw InvalidArgument(std::string(what) + ": transition row does not sum to 1");
      }
  }
};

/// S x A table, row-major.
struct Table {
  int num_states = 0;
  int num_actions = 0;
  std::vector<double> v;

  Table() = default;
  Table(int S, int A, double fill = 0.0) : num_states(S), num_actions(A), v(static_cast<std::size_t>(S) * A, fill) {}
  double& operator()(int s, int a) { return v[static_cast<std::size_t>(s) * num_actions + a]; }
  double operator()(int s, int a) const { return v[static_cast<std::size_t>(s) * num_actions + a]; }
};

struct TabularMDP {
  TransitionTensor transition;
  Table reward;
  double gamma = 0.9;

  int num_states() const { return transition.num_states; }
  int num_actions() const { return transition.num_actions; }
  void validate() const {
    transition.validate("TabularMDP");
    if (reward.num_states != num_states() || reward.num_actions != num_actions())
      throw ShapeError("TabularMDP: reward table shape mismatch");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw InvalidArgument("TabularMDP: gamma must be in [0, 1)");
  }
};

struct TabularModel {
  TransitionTensor transition;
  Table reward;
};

/// pi(a | s) as an S x A table whose rows sum to 1.
struct TabularPolicy {
  Table prob;

  void validate(int S, int A) const {
    if (prob.num_states != S || prob.num_actions != A) throw ShapeError("TabularPolicy: shape mismatch");
    for (int s = 0; s < S; ++s) {
      double sum = 0.0;
      for (int a = 0; a < A; ++a) {
        if (!(prob(s, a) >= 0.0)) throw InvalidArgument("TabularPolicy: negative probability");
        sum += prob(s, a);
      }
      if (std::abs(sum - 1.0) > 1e-12) throw InvalidArgument("TabularPolicy: row does not sum to 1");
    }
  }
};

/// Finite-horizon discounted expected return from a fixed (s0, a0):
///   r(s0, a0) + sum_{t=1}^{H-1} gamma^t E[r(s_t, a_t)],  a_t ~ pi(. | s_t),
/// computed by propagating the state distribution forward.
inline double expected_return(const TransitionTensor& p, const Table& reward, const TabularPolicy& policy, int s0,
                              int a0, double gamma, int horizon) {
  const int S = p.num_states, A = p.num_actions;
  if (reward.num_states != S || reward.num_actions != A) throw ShapeError("expected_return: reward shape mismatch");
  if (policy.prob.num_states != S || policy.prob.num_actions != A)
    throw ShapeError("expected_return: policy shape mismatch");
  if (p.p.size() != static_cast<std::size_t>(S) * A * S) throw ShapeError("expected_return: tensor size mismatch");
  if (s0 < 0 || s0 >= S || a0 < 0 || a0 >= A) throw InvalidArgument("expected_return: (s0, a0) out of range");
  if (horizon < 1) throw InvalidArgument("expected_return: horizon must be >= 1");

  double total = reward(s0, a0);
  std::vector<double> dist(p.row(s0, a0), p.row(s0, a0) + S);
  std::vector<double> next(S);
  double discount = 1.0;
  for (int t = 1; t < horizon; ++t) {
    discount *= gamma;
    double term = 0.0;
    std::fill(next.begin(), next.end(), 0.0);
    for (int s = 0; s < S; ++s) {
      if (dist[s] == 0.0) continue;
      for (int a = 0; a < A; ++a) {
        const double q = dist[s] * policy.prob(s, a);
        if (q == 0.0) continue;
        term += q * reward(s, a);
        const double* row = p.row(s, a);
        for (int sn = 0; sn < S; ++sn) next[sn] += q * row[sn];
      }
    }
    total += discount * term;
    dist.swap(next);
  }
  return total;
}

inline double total_variation(const double* p, const double* q, int n) {
  double d = 0.0;
  for (int i = 0; i < n; ++i) d += std::abs(p[i] - q[i]);
  return 0.5 * d;
}

/// max over all (s, a) of TV(p(.|s,a), p_hat(.|s,a)).
inline double model_error_tv(const TabularMDP& mdp, const TabularModel& model) {
  const int S = mdp.num_states(), A = mdp.num_actions();
  if (model.transition.num_states != S || model.transition.num_actions != A)
    throw ShapeError("model_error_tv: shape mismatch");
  double worst = 0.0;
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) worst = std::max(worst, total_variation(mdp.transition.row(s, a), model.transition.row(s, a), S));
  return worst;
}

/// max over t in [1, H-1] of TV between the state marginals reached under the
/// true and model dynamics from (s0, a0). Diagnostic companion to
/// model_error_tv, which bounds one-step divergence only.
inline double marginal_model_error(const TabularMDP& mdp, const TabularModel& model, const TabularPolicy& policy,
                                   int s0, int a0, int horizon) {
  const int S = mdp.num_states(), A = mdp.num_actions();
  auto propagate = [&](const TransitionTensor& p, std::vector<double>& d) {
    std::vector<double> n(S, 0.0);
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a) {
        const double q = d[s] * policy.prob(s, a);
        for (int sn = 0; sn < S; ++sn) n[sn] += q * p(s, a, sn);
      }
    d.swap(n);
  };
  std::vector<double> d_env(mdp.transition.row(s0, a0), mdp.transition.row(s0, a0) + S);
  std::vector<double> d_mod(model.transition.row(s0, a0), model.transition.row(s0, a0) + S);
  double worst = 0.0;
  for (int t = 1; t < horizon; ++t) {
    worst = std::max(worst, total_variation(d_env.data(), d_mod.data(), S));
    propagate(mdp.transition, d_env);
    propagate(model.transition, d_mod);
  }
  return worst;
}

struct BoundReport {
  double tree_error = 0.0;
  double bound_value = 0.0;
  double epsilon_r_max = 0.0;
  double epsilon_m = 0.0;
  double r_max = 0.0;
  double reward_gap_term = 0.0;
  double model_error_term = 0.0;
  bool holds = true;
  double epsilon_m_marginal = 0.0;  // diagnostic, see marginal_model_error
};

inline constexpr double kBoundTolerance = 1e-9;

/// Both terms of the trajectory-reward-estimation error bound.
inline void bound_terms(double gamma, int horizon, double eps_r, double r_max, double eps_m, double& reward_gap,
                        double& model_term) {
  const double gH = std::pow(gamma, horizon);
  reward_gap = (1.0 - gH) * eps_r / (1.0 - gamma);
  model_term = 2.0 * r_max * (gamma - gH) * eps_m / (1.0 - gamma);
}

/// Compares the exact return gap J_env - J_model against the analytic bound.
inline BoundReport verify_bound(const TabularMDP& mdp, const TabularModel& model, const TabularPolicy& policy, int s0,
                                int a0, int horizon) {
  if (!(mdp.gamma < 1.0)) throw InvalidArgument("verify_bound: gamma must be < 1 (bound undefined at gamma = 1)");
  mdp.validate();
  model.transition.validate("TabularModel");
  const int S = mdp.num_states(), A = mdp.num_actions();
  if (model.transition.num_states != S || model.transition.num_actions != A || model.reward.num_states != S ||
      model.reward.num_actions != A)
    throw ShapeError("verify_bound: model shape mismatch");
  policy.validate(S, A);
  if (horizon < 1) throw InvalidArgument("verify_bound: horizon must be >= 1");

  BoundReport r;
  r.tree_error = expected_return(mdp.transition, mdp.reward, policy, s0, a0, mdp.gamma, horizon) -
                 expected_return(model.transition, model.reward, policy, s0, a0, mdp.gamma, horizon);
  for (std::size_t i = 0; i < mdp.reward.v.size(); ++i) {
    r.epsilon_r_max = std::max(r.epsilon_r_max, std::abs(mdp.reward.v[i] - model.reward.v[i]));
    r.r_max = std::max(r.r_max, std::abs(mdp.reward.v[i]));
  }
  r.epsilon_m = model_error_tv(mdp, model);
  r.epsilon_m_marginal = marginal_model_error(mdp, model, policy, s0, a0, horizon);
  bound_terms(mdp.gamma, horizon, r.epsilon_r_max, r.r_max, r.epsilon_m, r.reward_gap_term, r.model_error_term);
  r.bound_value = r.reward_gap_term + r.model_error_term;
  r.holds = r.tree_error <= r.bound_value + kBoundTolerance;
  return r;
}

// ---------------------------------------------------------------------------
// Random instance generation

inline void dirichlet_row(RngStream& rng, double* out, int n, double concentration = 1.0) {
  std::gamma_distribution<double> g(concentration, 1.0);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += (out[i] = g(rng.engine()));
  if (sum <= 0.0) {
    std::fill(out, out + n, 0.0);
    out[rng.index(static_cast<std::size_t>(n))] = 1.0;
    return;
  }
  for (int i = 0; i < n; ++i) out[i] /= sum;
}

// Rows are renormalized so they sum to 1 within the validation tolerance.
inline void renormalize(TransitionTensor& p) {
  for (int s = 0; s < p.num_states; ++s)
    for (int a = 0; a < p.num_actions; ++a) {
      double* row = p.row(s, a);
      double sum = 0.0;
      for (int i = 0; i < p.num_states; ++i) sum += row[i];
      for (int i = 0; i < p.num_states; ++i) row[i] /= sum;
    }
}

inline TabularMDP random_mdp(RngStream& rng, int S, int A, double gamma) {
  TabularMDP m{TransitionTensor(S, A), Table(S, A), gamma};
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      dirichlet_row(rng, m.transition.row(s, a), S);
      m.reward(s, a) = rng.uniform(-1.0, 1.0);
    }
  renormalize(m.transition);
  return m;
}

/// Each model row is (1 - w) p + w q with q a fresh Dirichlet(1) draw;
/// each model reward is r_e + U[-amp, amp].
inline TabularModel perturb(const TabularMDP& mdp, RngStream& rng, double mix_weight, double reward_amplitude) {
  const int S = mdp.num_states(), A = mdp.num_actions();
  TabularModel m{mdp.transition, mdp.reward};
  std::vector<double> q(S);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      dirichlet_row(rng, q.data(), S);
      if (mix_weight > 0.0) {
        double* row = m.transition.row(s, a);
        for (int i = 0; i < S; ++i) row[i] = (1.0 - mix_weight) * row[i] + mix_weight * q[i];
      }
      const double noise = rng.uniform(-1.0, 1.0);
      m.reward(s, a) += reward_amplitude * noise;
    }
  if (mix_weight > 0.0) renormalize(m.transition);
  return m;
}

inline TabularPolicy random_policy(RngStream& rng, int S, int A) {
  TabularPolicy pi{Table(S, A)};
  for (int s = 0; s < S; ++s) dirichlet_row(rng, &pi.prob.v[static_cast<std::size_t>(s) * A], A);
  return pi;
}

/// Deterministic policy greedy with respect to the model's H-step Q-values.
inline TabularPolicy greedy_policy(const TabularModel& model, double gamma, int horizon) {
  const int S = model.transition.num_states, A = model.transition.num_actions;
  std::vector<double> v(S, 0.0);
  Table q(S, A);
  for (int t = 0; t < horizon; ++t) {
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a) {
        double cont = 0.0;
        for (int sn = 0; sn < S; ++sn) cont += model.transition(s, a, sn) * v[sn];
        q(s, a) = model.reward(s, a) + gamma * cont;
      }
    for (int s = 0; s < S; ++s) {
      double best = q(s, 0);
      for (int a = 1; a < A; ++a) best = std::max(best, q(s, a));
      v[s] = best;
    }
  }
  TabularPolicy pi{Table(S, A)};
  for (int s = 0; s < S; ++s) {
    int best = 0;
    for (int a = 1; a < A; ++a)
      if (q(s, a) > q(s, best)) best = a;
    pi.prob(s, best) = 1.0;
  }
  return pi;
}

struct StressConfig {
  int max_states = 8;
  int max_actions = 4;
  int max_horizon = 10;
  std::vector<double> gammas{0.9, 0.99};
  std::vector<double> mix_weights{0.0, 0.01, 0.05, 0.1, 0.3, 1.0};
  std::vector<double> reward_amplitudes{0.0, 0.01, 0.1, 0.5};
};

struct Instance {
  TabularMDP mdp;
  TabularModel model;
  TabularPolicy policy;
  int s0 = 0;
  int a0 = 0;
  int horizon = 1;
  double mix_weight = 0.0;
  double reward_amplitude = 0.0;
  bool greedy = false;
};

template <typename T>
const T& pick(RngStream& rng, const std::vector<T>& v) {
  return v[rng.index(v.size())];
}

/// Random (environment, model, policy, start) instance; deterministic in the stream.
inline Instance random_instance(RngStream& rng, const StressConfig& cfg) {
  Instance in;
  const int S = 1 + static_cast<int>(rng.index(static_cast<std::size_t>(cfg.max_states)));
  const int A = 1 + static_cast<int>(rng.index(static_cast<std::size_t>(cfg.max_actions)));
  in.horizon = 1 + static_cast<int>(rng.index(static_cast<std::size_t>(cfg.max_horizon)));
  const double gamma = pick(rng, cfg.gammas);
  in.mix_weight = pick(rng, cfg.mix_weights);
  in.reward_amplitude = pick(rng, cfg.reward_amplitudes);
  in.mdp = random_mdp(rng, S, A, gamma);
  in.model = perturb(in.mdp, rng, in.mix_weight, in.reward_amplitude);
  in.greedy = rng.uniform() < 0.5;
  in.policy = in.greedy ? greedy_policy(in.model, gamma, in.horizon) : random_policy(rng, S, A);
  in.s0 = static_cast<int>(rng.index(static_cast<std::size_t>(S)));
  in.a0 = static_cast<int>(rng.index(static_cast<std::size_t>(A)));
  return in;
}

struct SweepConfig {
  std::vector<double> gammas{0.9, 0.99};
  std::vector<int> horizons{1, 3, 5, 10};
  std::vector<double> scales{0.0, 0.05, 0.1, 0.2, 0.4};  // used for both mix weight and reward amplitude
  int instances_per_cell = 50;
  int max_states = 8;
  int max_actions = 4;
  std::uint64_t seed = 1;
};

struct SweepRow {
  double gamma = 0.0;
  int horizon = 0;
  double scale = 0.0;
  int instances = 0;
  int zero_cases = 0;  // bound == 0 exactly, ratio undefined
  int violations = 0;
  double mean_tree_error = 0.0;
  double mean_abs_tree_error = 0.0;
  double mean_ratio = 0.0;  // over instances with bound > 0
  double max_ratio = -std::numeric_limits<double>::infinity();
};

/// Sweeps (gamma, H, scale). Instance i of every cell with the same (gamma, H)
/// shares its base MDP, policy and perturbation direction, so cells differ
/// only in the perturbation scale.
inline std::vector<SweepRow> tightness_sweep(const SweepConfig& cfg) {
  std::vector<SweepRow> rows;
  for (double gamma : cfg.gammas)
    for (int H : cfg.horizons)
      for (double scale : cfg.scales) {
        SweepRow row{gamma, H, scale};
        int ratio_count = 0;
        for (int i = 0; i < cfg.instances_per_cell; ++i) {
          RngStream rng(cfg.seed, stream_key({static_cast<std::uint64_t>(std::llround(gamma * 1e6)),
                                              static_cast<std::uint64_t>(H), static_cast<std::uint64_t>(i)}));
          const int S = 1 + static_cast<int>(rng.index(static_cast<std::size_t>(cfg.max_states)));
          const int A = 1 + static_cast<int>(rng.index(static_cast<std::size_t>(cfg.max_actions)));
          auto mdp = random_mdp(rng, S, A, gamma);
          auto model = perturb(mdp, rng, scale, scale);
          auto pi = random_policy(rng, S, A);
          const int s0 = static_cast<int>(rng.index(static_cast<std::size_t>(S)));
          const int a0 = static_cast<int>(rng.index(static_cast<std::size_t>(A)));
          const auto rep = verify_bound(mdp, model, pi, s0, a0, H);
          ++row.instances;
          row.mean_tree_error += rep.tree_error;
          row.mean_abs_tree_error += std::abs(rep.tree_error);
          if (!rep.holds) ++row.violations;
          if (rep.bound_value == 0.0) {
            ++row.zero_cases;
          } else {
            const double ratio = rep.tree_error / rep.bound_value;
            row.mean_ratio += ratio;
            row.max_ratio = std::max(row.max_ratio, ratio);
            ++ratio_count;
          }
        }
        row.mean_tree_error /= row.instances;
        row.mean_abs_tree_error /= row.instances;
        if (ratio_count > 0) row.mean_ratio /= ratio_count;
        else row.max_ratio = std::numeric_limits<double>::quiet_NaN();
        rows.push_back(row);
      }
  return rows;
}

}  // namespace mope2::tabular
