#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "mope2/envs.hpp"
#include "support.hpp"

namespace {

using namespace mope2;
using mope2::testing::vec;

TEST(WrapAngle, MapsIntoHalfOpenInterval) {
  EXPECT_NEAR(wrap_angle(3 * std::numbers::pi / 2), -std::numbers::pi / 2, 1e-12);
  EXPECT_NEAR(wrap_angle(-3 * std::numbers::pi / 2), std::numbers::pi / 2, 1e-12);
  EXPECT_EQ(wrap_angle(0.25), 0.25);
  for (double a : {-100.0, -7.0, 7.0, 100.0}) {
    EXPECT_GE(wrap_angle(a), -std::numbers::pi);
    EXPECT_LT(wrap_angle(a), std::numbers::pi);
  }
}

TEST(Pendulum, UprightIsAFixedPoint) {
  PendulumSwingUp p;
  const Vec n = p.transition(vec({0.0, 0.0}), vec({0.0}));
  EXPECT_EQ(n, vec({0.0, 0.0}));
  EXPECT_EQ(p.reward(vec({0.0, 0.0}), vec({0.0})), 0.0);
}

TEST(Pendulum, RewardMatchesClosedForm) {
  PendulumSwingUp p;
  EXPECT_NEAR(p.reward(vec({0.5, -2.0}), vec({1.5})), -(0.25 + 0.4 + 0.001 * 2.25), 1e-15);
}

TEST(Pendulum, SpeedIsClamped) {
  PendulumSwingUp p;
  const Vec n = p.transition(vec({std::numbers::pi / 2, 7.99}), vec({2.0}));
  EXPECT_EQ(n[1], 8.0);
}

TEST(Pendulum, NoSecularEnergyDriftWithoutTorque) {
  // Semi-implicit Euler is symplectic: energy oscillates at O(dt^2) but does
  // not drift. Fit a line through E_t over many steps and check its slope.
  PendulumSwingUp p;
  Vec s = vec({std::numbers::pi - 0.3, 0.0});
  const int n = 20000;
  double st = 0, se = 0, stt = 0, ste = 0;
  for (int t = 0; t < n; ++t) {
    const double e = p.energy(s);
    st += t;
    se += e;
    stt += double(t) * t;
    ste += t * e;
    s = p.transition(s, vec({0.0}));
  }
  const double slope = (n * ste - st * se) / (n * stt - st * st);
  const double mean = se / n;
  EXPECT_LE(std::abs(slope / mean), 1e-6);
}

TEST(PointMass, UnitForceFromRestMovesDtSquared) {
  DeceptivePointMass pm;
  const double dt = pm.params().dt;
  const Vec n = pm.transition(Vec::Zero(4), vec({1.0, 0.0}));
  EXPECT_NEAR(n[0], dt * dt, 1e-15);
  EXPECT_NEAR(n[2], dt, 1e-15);
  EXPECT_EQ(n[1], 0.0);
  EXPECT_EQ(n[3], 0.0);
}

TEST(PointMass, WallStopsMotion) {
  DeceptivePointMass pm;
  const double w = pm.params().arena;
  const Vec n = pm.transition(vec({w - 1e-3, 0.0, 5.0, 0.0}), vec({1.0, 0.0}));
  EXPECT_EQ(n[0], w);
  EXPECT_EQ(n[2], 0.0);
}

TEST(PointMass, GoalOutweighsDistractor) {
  DeceptivePointMass pm;
  const auto& q = pm.params();
  const Vec a = Vec::Zero(2);
  const double at_goal = pm.reward(vec({q.goal_x, q.goal_y, 0, 0}), a);
  const double at_distractor = pm.reward(vec({q.distractor_x, q.distractor_y, 0, 0}), a);
  EXPECT_NEAR(at_goal, q.goal_height, 1e-9);
  EXPECT_NEAR(at_distractor, q.distractor_height, 1e-9);
  EXPECT_GT(at_goal, at_distractor);
  // The start sees the distractor's slope, not the goal's.
  EXPECT_GT(pm.reward(vec({0.2, 0, 0, 0}), a), pm.reward(vec({-0.2, 0.2, 0, 0}), a));
}

TEST(Environments, RewardsBoundedByRMax) {
  RngStream rng(1, 1);
  for (const auto& name : environment_names()) {
    auto env = make_environment(name);
    const auto box = env->action_box();
    Vec s = env->reset(rng);
    for (int i = 0; i < 3000; ++i) {
      Vec a(env->action_dim());
      for (Eigen::Index k = 0; k < a.size(); ++k) a[k] = rng.uniform(box.low[k], box.high[k]);
      const auto r = env->step(a);
      ASSERT_TRUE(std::isfinite(r.reward)) << name;
      ASSERT_LE(std::abs(r.reward), env->r_max()) << name;
      s = r.done ? env->reset(rng) : r.next_state;
    }
  }
}

TEST(Environments, DeterministicTransitions) {
  for (const auto& name : environment_names()) {
    auto env = make_environment(name);
    RngStream rng(3, 3);
    const Vec s = env->reset(rng);
    const Vec a = Vec::Constant(env->action_dim(), 0.3);
    EXPECT_EQ(env->transition(s, a), env->transition(s, a)) << name;
    EXPECT_EQ(env->reward(s, a), env->reward(s, a)) << name;
  }
}

TEST(Environments, StepCountsToHorizonAndClipsActions) {
  auto env = make_environment("pendulum", {{"horizon", 3}});
  RngStream rng(0, 0);
  env->reset(rng);
  const auto r1 = env->step(vec({5.0}));
  EXPECT_TRUE(r1.clipped);
  EXPECT_FALSE(r1.done);
  EXPECT_FALSE(env->step(vec({0.0})).clipped);
  EXPECT_TRUE(env->step(vec({0.0})).done);
  EXPECT_EQ(env->step_count(), 3);
  env->reset(rng);
  EXPECT_EQ(env->step_count(), 0);
}

TEST(Environments, ClippedActionIsWhatGetsApplied) {
  auto a = make_environment("point_mass");
  auto b = make_environment("point_mass");
  RngStream r1(0, 0), r2(0, 0);
  a->reset(r1);
  b->reset(r2);
  EXPECT_EQ(a->step(vec({9.0, -9.0})).next_state, b->step(vec({1.0, -1.0})).next_state);
}

TEST(Environments, RejectsBadActions) {
  auto env = make_environment("cartpole");
  RngStream rng(0, 0);
  env->reset(rng);
  EXPECT_THROW(env->step(vec({NAN})), NumericError);
  EXPECT_THROW(env->step(vec({0.0, 0.0})), ShapeError);
}

TEST(Environments, ProcessNoisePerturbsOnlyWhenEnabled) {
  auto quiet = make_environment("point_mass");
  auto noisy = make_environment("point_mass", {{"process_noise", 0.1}});
  RngStream r1(0, 0), r2(0, 0);
  quiet->reset(r1);
  noisy->reset(r2);
  EXPECT_EQ(quiet->step(vec({0.0, 0.0})).next_state, Vec::Zero(4));
  EXPECT_NE(noisy->step(vec({0.0, 0.0})).next_state, Vec::Zero(4));
}

TEST(MakeEnvironment, OverridesAndErrors) {
  auto env = make_environment("point_mass", {{"goal_x", -1.0}, {"horizon", 7}});
  EXPECT_EQ(env->parameters()["goal_x"], -1.0);
  EXPECT_EQ(env->horizon(), 7);
  EXPECT_THROW(make_environment("hopper"), ConfigError);
  try {
    make_environment("pendulum", {{"gravty", 9.0}});
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("env.params.gravty"), std::string::npos);
  }
  EXPECT_THROW(make_environment("pendulum", {{"mass", "heavy"}}), ConfigError);
}

TEST(TrueDynamicsModel, WrapsEnvironment) {
  PendulumSwingUp p;
  TrueDynamicsModel m(p);
  const Vec s = vec({0.4, -1.0}), a = vec({0.5});
  const auto pred = m.predict_batch(0, s, a);
  EXPECT_EQ(Vec(pred.mean.col(0)), p.transition(s, a));
  EXPECT_EQ(m.reward_batch(s, a)[0], p.reward(s, a));
}

}  // namespace
