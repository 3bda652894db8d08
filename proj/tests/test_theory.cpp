#include <cmath>
#include <functional>

#include <gtest/gtest.h>

#include "mope2/theory.hpp"

namespace {

using namespace mope2;
using namespace mope2::tabular;

// Sums gamma^t r over every trajectory weighted by its probability.
double enumerate_return(const TransitionTensor& p, const Table& r, const TabularPolicy& pi, int s0, int a0,
                        double gamma, int H) {
  const int S = p.num_states, A = p.num_actions;
  std::function<double(int, int, int)> go = [&](int s, int a, int t) -> double {
    double v = std::pow(gamma, t) * r(s, a);
    if (t + 1 == H) return v;
    for (int sn = 0; sn < S; ++sn) {
      const double ps = p(s, a, sn);
      if (ps == 0.0) continue;
      for (int an = 0; an < A; ++an) {
        const double pa = pi.prob(sn, an);
        if (pa == 0.0) continue;
        v += ps * pa * go(sn, an, t + 1);
      }
    }
    return v;
  };
  return go(s0, a0, 0);
}

TabularMDP two_state_leak_env(double gamma) {
  TabularMDP m{TransitionTensor(2, 1), Table(2, 1), gamma};
  m.transition(0, 0, 0) = 1.0;
  m.transition(1, 0, 1) = 1.0;
  m.reward(0, 0) = 1.0;
  m.reward(1, 0) = -1.0;
  return m;
}

TabularPolicy single_action_policy(int S) {
  TabularPolicy pi{Table(S, 1, 1.0)};
  return pi;
}

TEST(ExpectedReturn, HorizonOneIsImmediateReward) {
  RngStream rng(1, 0);
  const auto m = random_mdp(rng, 4, 3, 0.9);
  const auto pi = random_policy(rng, 4, 3);
  EXPECT_EQ(expected_return(m.transition, m.reward, pi, 2, 1, 0.9, 1), m.reward(2, 1));
}

TEST(ExpectedReturn, IdentityDynamicsConstantRewardIsGeometricSum) {
  TransitionTensor p(3, 2);
  for (int s = 0; s < 3; ++s)
    for (int a = 0; a < 2; ++a) p(s, a, s) = 1.0;
  Table r(3, 2, 2.0);
  TabularPolicy pi{Table(3, 2, 0.5)};
  EXPECT_NEAR(expected_return(p, r, pi, 1, 0, 0.9, 3), 2.0 * (1 + 0.9 + 0.81), 1e-15);
}

TEST(ExpectedReturn, MatchesExhaustiveEnumeration) {
  RngStream rng(2, 0);
  for (int i = 0; i < 200; ++i) {
    const int S = 1 + static_cast<int>(rng.index(4)), A = 1 + static_cast<int>(rng.index(2));
    const int H = 1 + static_cast<int>(rng.index(5));
    const double gamma = rng.uniform(0.0, 0.99);
    const auto m = random_mdp(rng, S, A, gamma);
    const auto pi = random_policy(rng, S, A);
    const int s0 = static_cast<int>(rng.index(S)), a0 = static_cast<int>(rng.index(A));
    EXPECT_NEAR(expected_return(m.transition, m.reward, pi, s0, a0, gamma, H),
                enumerate_return(m.transition, m.reward, pi, s0, a0, gamma, H), 1e-10);
  }
}

TEST(ExpectedReturn, LinearInReward) {
  RngStream rng(3, 0);
  const auto m = random_mdp(rng, 5, 2, 0.95);
  const auto pi = random_policy(rng, 5, 2);
  Table scaled = m.reward;
  for (auto& v : scaled.v) v *= 4.0;
  EXPECT_EQ(expected_return(m.transition, scaled, pi, 0, 1, 0.95, 6),
            4.0 * expected_return(m.transition, m.reward, pi, 0, 1, 0.95, 6));
}

TEST(ExpectedReturn, Errors) {
  TransitionTensor p(2, 1);
  Table r(2, 1);
  EXPECT_THROW(expected_return(p, r, single_action_policy(2), 2, 0, 0.9, 3), InvalidArgument);
  EXPECT_THROW(expected_return(p, r, single_action_policy(2), 0, 0, 0.9, 0), InvalidArgument);
  EXPECT_THROW(expected_return(p, Table(3, 1), single_action_policy(2), 0, 0, 0.9, 1), ShapeError);
}

TEST(TotalVariation, HalfL1Distance) {
  const double p[] = {0.5, 0.5, 0.0}, q[] = {0.0, 0.5, 0.5};
  EXPECT_EQ(total_variation(p, q, 3), 0.5);
  EXPECT_EQ(total_variation(p, p, 3), 0.0);
}

TEST(VerifyBound, IdenticalModelGivesZeroErrorAndZeroBound) {
  RngStream rng(4, 0);
  const auto m = random_mdp(rng, 6, 3, 0.99);
  const TabularModel same{m.transition, m.reward};
  const auto r = verify_bound(m, same, random_policy(rng, 6, 3), 1, 2, 8);
  EXPECT_EQ(r.tree_error, 0.0);
  EXPECT_EQ(r.bound_value, 0.0);
  EXPECT_TRUE(r.holds);
}

TEST(VerifyBound, HorizonOneReducesToRewardGap) {
  RngStream rng(5, 0);
  const auto m = random_mdp(rng, 3, 2, 0.9);
  const auto model = perturb(m, rng, 0.3, 0.2);
  const auto r = verify_bound(m, model, random_policy(rng, 3, 2), 0, 1, 1);
  EXPECT_NEAR(r.tree_error, m.reward(0, 1) - model.reward(0, 1), 1e-15);
  EXPECT_EQ(r.model_error_term, 0.0);
  EXPECT_NEAR(r.bound_value, r.epsilon_r_max, 1e-15);
  EXPECT_TRUE(r.holds);
}

TEST(VerifyBound, GammaZeroLimit) {
  RngStream rng(6, 0);
  auto m = random_mdp(rng, 4, 2, 0.0);
  const auto model = perturb(m, rng, 0.5, 0.3);
  const auto r = verify_bound(m, model, random_policy(rng, 4, 2), 3, 0, 7);
  EXPECT_NEAR(r.bound_value, r.epsilon_r_max, 1e-15);
  EXPECT_NEAR(r.tree_error, m.reward(3, 0) - model.reward(3, 0), 1e-15);
}

TEST(VerifyBound, TermsAddUpAndMatchFormula) {
  RngStream rng(7, 0);
  const auto m = random_mdp(rng, 5, 3, 0.9);
  const auto model = perturb(m, rng, 0.1, 0.1);
  const auto r = verify_bound(m, model, random_policy(rng, 5, 3), 0, 0, 6);
  EXPECT_EQ(r.bound_value, r.reward_gap_term + r.model_error_term);
  const double g6 = std::pow(0.9, 6);
  EXPECT_NEAR(r.reward_gap_term, (1 - g6) / 0.1 * r.epsilon_r_max, 1e-12);
  EXPECT_NEAR(r.model_error_term, 2 * r.r_max * (0.9 - g6) / 0.1 * r.epsilon_m, 1e-12);
}

TEST(VerifyBound, SwappingEnvironmentAndModel) {
  RngStream rng(8, 0);
  const auto m = random_mdp(rng, 5, 2, 0.9);
  const auto model = perturb(m, rng, 0.2, 0.0);  // rewards equal, so r_max is symmetric too
  const auto pi = random_policy(rng, 5, 2);
  const TabularMDP swapped_env{model.transition, model.reward, m.gamma};
  const TabularModel swapped_model{m.transition, m.reward};
  const auto a = verify_bound(m, model, pi, 1, 1, 7);
  const auto b = verify_bound(swapped_env, swapped_model, pi, 1, 1, 7);
  EXPECT_NEAR(a.tree_error, -b.tree_error, 1e-14);
  EXPECT_EQ(a.epsilon_m, b.epsilon_m);
  EXPECT_EQ(a.epsilon_r_max, b.epsilon_r_max);
  EXPECT_EQ(a.bound_value, b.bound_value);
}

TEST(VerifyBound, RejectsGammaOne) {
  RngStream rng(9, 0);
  auto m = random_mdp(rng, 2, 2, 0.9);
  m.gamma = 1.0;
  const TabularModel same{m.transition, m.reward};
  EXPECT_THROW(verify_bound(m, same, random_policy(rng, 2, 2), 0, 0, 3), InvalidArgument);
}

TEST(VerifyBound, RejectsNonStochasticRows) {
  RngStream rng(9, 1);
  auto m = random_mdp(rng, 2, 2, 0.9);
  TabularModel bad{m.transition, m.reward};
  bad.transition(0, 0, 0) += 0.1;
  EXPECT_THROW(verify_bound(m, bad, random_policy(rng, 2, 2), 0, 0, 3), InvalidArgument);
}

// With epsilon_m taken as the worst one-step TV, the state marginals can
// drift apart faster than epsilon_m per step: the model leaks eps of mass
// into the absorbing bad state every step while the environment never does.
TEST(VerifyBound, OneStepModelErrorCanUnderstateCompoundedDrift) {
  const double eps = 0.1, gamma = 0.99;
  const int H = 10;
  const auto env = two_state_leak_env(gamma);
  TabularModel model{env.transition, env.reward};
  model.transition(0, 0, 0) = 1.0 - eps;
  model.transition(0, 0, 1) = eps;
  const auto pi = single_action_policy(2);
  const auto r = verify_bound(env, model, pi, 0, 0, H);

  double gap = 0.0, disc = 1.0;
  for (int t = 1; t < H; ++t) {
    disc *= gamma;
    gap += disc * 2.0 * (1.0 - std::pow(1.0 - eps, t));
  }
  EXPECT_NEAR(r.tree_error, gap, 1e-12);
  EXPECT_NEAR(r.epsilon_m, eps, 1e-15);
  EXPECT_FALSE(r.holds);
  EXPECT_GT(r.tree_error, r.bound_value);

  // Using the largest marginal divergence instead restores the inequality.
  EXPECT_NEAR(r.epsilon_m_marginal, 1.0 - std::pow(1.0 - eps, H - 1), 1e-12);
  double reward_gap = 0.0, model_term = 0.0;
  bound_terms(gamma, H, r.epsilon_r_max, r.r_max, r.epsilon_m_marginal, reward_gap, model_term);
  EXPECT_LE(r.tree_error, reward_gap + model_term);
}

TEST(VerifyBound, MarginalFormHoldsOnRandomInstances) {
  const StressConfig cfg;
  for (int i = 0; i < 500; ++i) {
    RngStream rng(21, static_cast<std::uint64_t>(i));
    const auto in = random_instance(rng, cfg);
    const auto r = verify_bound(in.mdp, in.model, in.policy, in.s0, in.a0, in.horizon);
    double rg = 0.0, mt = 0.0;
    bound_terms(in.mdp.gamma, in.horizon, r.epsilon_r_max, r.r_max, r.epsilon_m_marginal, rg, mt);
    EXPECT_LE(std::abs(r.tree_error), rg + mt + kBoundTolerance) << "instance " << i;
    EXPECT_LE(r.epsilon_m_marginal, 1.0 + 1e-12);
  }
}

TEST(RandomInstance, DeterministicInStream) {
  const StressConfig cfg;
  RngStream a(3, 3), b(3, 3);
  const auto x = random_instance(a, cfg), y = random_instance(b, cfg);
  EXPECT_EQ(x.mdp.transition.p, y.mdp.transition.p);
  EXPECT_EQ(x.model.reward.v, y.model.reward.v);
  EXPECT_EQ(x.horizon, y.horizon);
}

TEST(Perturb, ZeroScaleIsExactCopy) {
  RngStream rng(10, 0);
  const auto m = random_mdp(rng, 5, 3, 0.9);
  const auto model = perturb(m, rng, 0.0, 0.0);
  EXPECT_EQ(model.transition.p, m.transition.p);
  EXPECT_EQ(model.reward.v, m.reward.v);
}

TEST(GreedyPolicy, PicksBestImmediateActionAtHorizonOne) {
  TabularModel m{TransitionTensor(1, 3), Table(1, 3)};
  for (int a = 0; a < 3; ++a) m.transition(0, a, 0) = 1.0;
  m.reward(0, 0) = 0.1;
  m.reward(0, 1) = 0.7;
  m.reward(0, 2) = -0.2;
  const auto pi = greedy_policy(m, 0.9, 1);
  EXPECT_EQ(pi.prob(0, 1), 1.0);
}

TEST(TightnessSweep, ErrorMagnitudeGrowsWithPerturbationScale) {
  SweepConfig cfg;
  cfg.instances_per_cell = 30;
  cfg.horizons = {3, 10};
  const auto rows = tightness_sweep(cfg);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].scale == 0.0) {
      EXPECT_EQ(rows[i].mean_abs_tree_error, 0.0);
      EXPECT_EQ(rows[i].zero_cases, rows[i].instances);
    } else {
      ASSERT_GT(i, 0u);
      EXPECT_GE(rows[i].mean_abs_tree_error, rows[i - 1].mean_abs_tree_error)
          << "gamma " << rows[i].gamma << " H " << rows[i].horizon << " scale " << rows[i].scale;
    }
  }
}

}  // namespace
