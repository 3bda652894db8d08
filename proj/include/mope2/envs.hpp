#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mope2/errors.hpp"
#include "mope2/gaussian.hpp"
#include "mope2/planner.hpp"
#include "mope2/rng.hpp"

namespace mope2 {

struct StepResult {
  Vec next_state;
  double reward = 0.0;
  bool done = false;
  bool clipped = false;  // action was outside the box and got clipped
};

inline double wrap_angle(double a) {
  constexpr double pi = std::numbers::pi;
  a = std::fmod(a + pi, 2.0 * pi);
  if (a < 0.0) a += 2.0 * pi;
  return a - pi;
}

/// Noise-free analytic environment with an episode counter.
///
/// `transition` is the pure dynamics/reward map; `step` applies it to the
/// internal state (plus optional Gaussian process noise) and counts steps.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual std::string name() const = 0;
  virtual int state_dim() const = 0;
  virtual int action_dim() const = 0;
  virtual ActionBox action_box() const = 0;
  /// Exact supremum of |reward| over reachable states and in-box actions.
  virtual double r_max() const = 0;
  virtual Vec transition(const Vec& state, const Vec& action) const = 0;
  virtual double reward(const Vec& state, const Vec& action) const = 0;
  /// Parameters in effect, including defaults.
  virtual nlohmann::json parameters() const = 0;

  int horizon() const noexcept { return horizon_; }
  void set_horizon(int h) {
    if (h < 1) throw InvalidArgument("environment horizon must be >= 1");
    horizon_ = h;
  }
  double process_noise() const noexcept { return process_noise_; }
  void set_process_noise(double s) {
    if (!(s >= 0.0)) throw InvalidArgument("process_noise must be >= 0");
    process_noise_ = s;
  }

  Vec reset(RngStream& rng) {
    counter_ = 0;
    state_ = initial_state(rng);
    noise_ = rng.derive({0x6e6f6973ULL});
    return state_;
  }

  StepResult step(const Vec& action) {
    if (action.size() != action_dim()) throw ShapeError("step: action dimension mismatch");
    if (!action.allFinite()) throw NumericError("step: non-finite action");
    if (state_.size() == 0) throw InvalidArgument("step: environment not reset");
    const auto box = action_box();
    StepResult r;
    r.clipped = !box.contains(action);
    const Vec a = box.clip(action);
    r.reward = reward(state_, a);
    r.next_state = transition(state_, a);
    if (process_noise_ > 0.0 && noise_) {
      for (Eigen::Index i = 0; i < r.next_state.size(); ++i) r.next_state[i] += process_noise_ * noise_->normal();
    }
    state_ = r.next_state;
    ++counter_;
    r.done = counter_ >= horizon_;
    return r;
  }

  const Vec& state() const noexcept { return state_; }
  void set_state(Vec s) {
    if (s.size() != state_dim()) throw ShapeError("set_state: dimension mismatch");
    state_ = std::move(s);
  }
  int step_count() const noexcept { return counter_; }

 protected:
  virtual Vec initial_state(RngStream& rng) const = 0;

 private:
  Vec state_;
  int counter_ = 0;
  int horizon_ = 200;
  double process_noise_ = 0.0;
  std::optional<RngStream> noise_;
};

struct PendulumParams {
  double gravity = 10.0;
  double mass = 1.0;
  double length = 1.0;
  double damping = 0.0;
  double dt = 0.05;
  double max_torque = 2.0;
  double max_speed = 8.0;
};

/// Torque-limited pendulum. State (angle, angular velocity) with angle 0 at
/// the upright position. Semi-implicit Euler:
///   w' = clamp(w + dt (g/l sin(th) + u/(m l^2) - damping w), +-max_speed)
///   th' = wrap(th + dt w')
/// Reward -(wrap(th)^2 + 0.1 w^2 + 0.001 u^2). Reset: th ~ U[-pi, pi), w ~ U[-1, 1].
class PendulumSwingUp final : public Environment {
 public:
  using Params = PendulumParams;


  explicit PendulumSwingUp(Params p = {}) : p_(p) {}

  std::string name() const override { return "pendulum"; }
  int state_dim() const override { return 2; }
  int action_dim() const override { return 1; }
  ActionBox action_box() const override { return ActionBox::symmetric(1, p_.max_torque); }
  double r_max() const override {
    const double pi = std::numbers::pi;
    return pi * pi + 0.1 * p_.max_speed * p_.max_speed + 0.001 * p_.max_torque * p_.max_torque;
  }
  Vec transition(const Vec& s, const Vec& a) const override {
    const double acc = p_.gravity / p_.length * std::sin(s[0]) + a[0] / (p_.mass * p_.length * p_.length) -
                       p_.damping * s[1];
    Vec n(2);
    n[1] = std::clamp(s[1] + p_.dt * acc, -p_.max_speed, p_.max_speed);
    n[0] = wrap_angle(s[0] + p_.dt * n[1]);
    return n;
  }
  double reward(const Vec& s, const Vec& a) const override {
    const double th = wrap_angle(s[0]);
    return -(th * th + 0.1 * s[1] * s[1] + 0.001 * a[0] * a[0]);
  }
  /// Kinetic plus potential energy, zero potential at the pivot height.
  double energy(const Vec& s) const {
    const double ml2 = p_.mass * p_.length * p_.length;
    return 0.5 * ml2 * s[1] * s[1] + p_.mass * p_.gravity * p_.length * std::cos(s[0]);
  }
  nlohmann::json parameters() const override {
    return {{"gravity", p_.gravity}, {"mass", p_.mass},         {"length", p_.length},
            {"damping", p_.damping}, {"dt", p_.dt},             {"max_torque", p_.max_torque},
            {"max_speed", p_.max_speed}};
  }
  const Params& params() const noexcept { return p_; }

 protected:
  Vec initial_state(RngStream& rng) const override {
    Vec s(2);
    s[0] = rng.uniform(-std::numbers::pi, std::numbers::pi);
    s[1] = rng.uniform(-1.0, 1.0);
    return s;
  }

 private:
  Params p_;
};

struct PointMassParams {
  double dt = 0.1;
  double mass = 1.0;
  double drag = 0.5;
  double arena = 4.0;
  double distractor_x = 0.8, distractor_y = 0.0, distractor_height = 1.0, distractor_width = 0.4;
  double goal_x = -2.5, goal_y = 2.5, goal_height = 10.0, goal_width = 0.6;
  double action_cost = 0.01;
};

/// Planar point mass in a walled arena with a deceptive reward landscape:
/// a small bump ("distractor") close to the start and a large bump ("goal")
/// further away. State (x, y, vx, vy), action is a force in [-1, 1]^2.
///   v' = v + dt (u / mass - drag v);  p' = p + dt v'
/// A coordinate leaving [-arena, arena] is clamped and its velocity zeroed.
/// Reward: max(h_d exp(-|p-d|^2 / 2 w_d^2), h_g exp(-|p-g|^2 / 2 w_g^2)) - c |u|^2.
/// Reset: exactly the origin at rest.
class DeceptivePointMass final : public Environment {
 public:
  using Params = PointMassParams;


  explicit DeceptivePointMass(Params p = {}) : p_(p) {}

  std::string name() const override { return "point_mass"; }
  int state_dim() const override { return 4; }
  int action_dim() const override { return 2; }
  ActionBox action_box() const override { return ActionBox::symmetric(2, 1.0); }
  double r_max() const override {
    return std::max({p_.goal_height, p_.distractor_height, 2.0 * p_.action_cost});
  }
  Vec transition(const Vec& s, const Vec& a) const override {
    Vec n(4);
    for (int i = 0; i < 2; ++i) {
      double v = s[2 + i] + p_.dt * (a[i] / p_.mass - p_.drag * s[2 + i]);
      double x = s[i] + p_.dt * v;
      if (x > p_.arena) {
        x = p_.arena;
        v = 0.0;
      } else if (x < -p_.arena) {
        x = -p_.arena;
        v = 0.0;
      }
      n[i] = x;
      n[2 + i] = v;
    }
    return n;
  }
  double reward(const Vec& s, const Vec& a) const override {
    auto bump = [&](double cx, double cy, double h, double w) {
      const double dx = s[0] - cx, dy = s[1] - cy;
      return h * std::exp(-(dx * dx + dy * dy) / (2.0 * w * w));
    };
    const double d = bump(p_.distractor_x, p_.distractor_y, p_.distractor_height, p_.distractor_width);
    const double g = bump(p_.goal_x, p_.goal_y, p_.goal_height, p_.goal_width);
    return std::max(d, g) - p_.action_cost * a.squaredNorm();
  }
  nlohmann::json parameters() const override {
    return {{"dt", p_.dt},
            {"mass", p_.mass},
            {"drag", p_.drag},
            {"arena", p_.arena},
            {"distractor_x", p_.distractor_x},
            {"distractor_y", p_.distractor_y},
            {"distractor_height", p_.distractor_height},
            {"distractor_width", p_.distractor_width},
            {"goal_x", p_.goal_x},
            {"goal_y", p_.goal_y},
            {"goal_height", p_.goal_height},
            {"goal_width", p_.goal_width},
            {"action_cost", p_.action_cost}};
  }
  const Params& params() const noexcept { return p_; }

 protected:
  Vec initial_state(RngStream&) const override { return Vec::Zero(4); }

 private:
  Params p_;
};

struct CartPoleParams {
  double gravity = 9.8;
  double cart_mass = 1.0;
  double pole_mass = 0.1;
  double pole_half_length = 0.5;
  double max_force = 10.0;
  double dt = 0.05;
  double track_limit = 3.0;
};

/// Cart-pole swing-up with force actuation. State (x, x_dot, theta, theta_dot),
/// theta = 0 upright. Classic cart-pole equations of motion integrated with
/// semi-implicit Euler; the cart is stopped at the track ends.
/// Action u in [-1, 1] scaled by max_force.
/// Reward: cos(theta) - 0.01 x^2 - 0.001 u^2.
/// Reset: hanging (theta = pi) with U[-0.05, 0.05] noise on every coordinate.
class ContinuousCartPole final : public Environment {
 public:
  using Params = CartPoleParams;


  explicit ContinuousCartPole(Params p = {}) : p_(p) {}

  std::string name() const override { return "cartpole"; }
  int state_dim() const override { return 4; }
  int action_dim() const override { return 1; }
  ActionBox action_box() const override { return ActionBox::symmetric(1, 1.0); }
  double r_max() const override {
    return 1.0 + 0.01 * p_.track_limit * p_.track_limit + 0.001;
  }
  Vec transition(const Vec& s, const Vec& a) const override {
    const double force = p_.max_force * a[0];
    const double total = p_.cart_mass + p_.pole_mass;
    const double pml = p_.pole_mass * p_.pole_half_length;
    const double sin_t = std::sin(s[2]), cos_t = std::cos(s[2]);
    const double tmp = (force + pml * s[3] * s[3] * sin_t) / total;
    const double theta_acc = (p_.gravity * sin_t - cos_t * tmp) /
                             (p_.pole_half_length * (4.0 / 3.0 - p_.pole_mass * cos_t * cos_t / total));
    const double x_acc = tmp - pml * theta_acc * cos_t / total;
    Vec n(4);
    n[1] = s[1] + p_.dt * x_acc;
    n[0] = s[0] + p_.dt * n[1];
    n[3] = s[3] + p_.dt * theta_acc;
    n[2] = wrap_angle(s[2] + p_.dt * n[3]);
    if (n[0] > p_.track_limit || n[0] < -p_.track_limit) {
      n[0] = std::clamp(n[0], -p_.track_limit, p_.track_limit);
      n[1] = 0.0;
    }
    return n;
  }
  double reward(const Vec& s, const Vec& a) const override {
    const double x = std::clamp(s[0], -p_.track_limit, p_.track_limit);
    return std::cos(s[2]) - 0.01 * x * x - 0.001 * a[0] * a[0];
  }
  nlohmann::json parameters() const override {
    return {{"gravity", p_.gravity},     {"cart_mass", p_.cart_mass}, {"pole_mass", p_.pole_mass},
            {"pole_half_length", p_.pole_half_length}, {"max_force", p_.max_force}, {"dt", p_.dt},
            {"track_limit", p_.track_limit}};
  }

 protected:
  Vec initial_state(RngStream& rng) const override {
    Vec s(4);
    s << rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), wrap_angle(std::numbers::pi + rng.uniform(-0.05, 0.05)),
        rng.uniform(-0.05, 0.05);
    return s;
  }

 private:
  Params p_;
};

namespace detail {
template <typename P>
void apply_overrides(P& p, const nlohmann::json& overrides,
                     const std::map<std::string, double P::*>& fields, const std::string& prefix) {
  for (auto it = overrides.begin(); it != overrides.end(); ++it) {
    if (it.key() == "horizon" || it.key() == "process_noise") continue;
    auto f = fields.find(it.key());
    if (f == fields.end()) throw ConfigError("unknown key '" + prefix + it.key() + "'");
    if (!it->is_number()) throw ConfigError("key '" + prefix + it.key() + "' must be a number");
    p.*(f->second) = it->get<double>();
  }
}
}  // namespace detail

inline const std::vector<std::string>& environment_names() {
  static const std::vector<std::string> names{"pendulum", "point_mass", "cartpole"};
  return names;
}

/// Builds an environment by name. `overrides` may set any documented
/// parameter plus "horizon" and "process_noise"; unknown keys are rejected.
inline std::unique_ptr<Environment> make_environment(const std::string& name,
                                                     const nlohmann::json& overrides = nlohmann::json::object(),
                                                     const std::string& key_prefix = "env.params.") {
  if (!overrides.is_object()) throw ConfigError("'" + key_prefix.substr(0, key_prefix.size() - 1) + "' must be an object");
  std::unique_ptr<Environment> env;
  if (name == "pendulum") {
    using P = PendulumSwingUp::Params;
    P p;
    detail::apply_overrides<P>(p, overrides,
                               {{"gravity", &P::gravity},
                                {"mass", &P::mass},
                                {"length", &P::length},
                                {"damping", &P::damping},
                                {"dt", &P::dt},
                                {"max_torque", &P::max_torque},
                                {"max_speed", &P::max_speed}},
                               key_prefix);
    env = std::make_unique<PendulumSwingUp>(p);
  } else if (name == "point_mass") {
    using P = DeceptivePointMass::Params;
    P p;
    detail::apply_overrides<P>(p, overrides,
                               {{"dt", &P::dt},
                                {"mass", &P::mass},
                                {"drag", &P::drag},
                                {"arena", &P::arena},
                                {"distractor_x", &P::distractor_x},
                                {"distractor_y", &P::distractor_y},
                                {"distractor_height", &P::distractor_height},
                                {"distractor_width", &P::distractor_width},
                                {"goal_x", &P::goal_x},
                                {"goal_y", &P::goal_y},
                                {"goal_height", &P::goal_height},
                                {"goal_width", &P::goal_width},
                                {"action_cost", &P::action_cost}},
                               key_prefix);
    env = std::make_unique<DeceptivePointMass>(p);
  } else if (name == "cartpole") {
    using P = ContinuousCartPole::Params;
    P p;
    detail::apply_overrides<P>(p, overrides,
                               {{"gravity", &P::gravity},
                                {"cart_mass", &P::cart_mass},
                                {"pole_mass", &P::pole_mass},
                                {"pole_half_length", &P::pole_half_length},
                                {"max_force", &P::max_force},
                                {"dt", &P::dt},
                                {"track_limit", &P::track_limit}},
                               key_prefix);
    env = std::make_unique<ContinuousCartPole>(p);
  } else {
    throw ConfigError("unknown environment '" + name + "' (expected pendulum, point_mass or cartpole)");
  }
  if (overrides.contains("horizon")) env->set_horizon(overrides.at("horizon").get<int>());
  if (overrides.contains("process_noise")) env->set_process_noise(overrides.at("process_noise").get<double>());
  return env;
}

/// Planning model backed by the true environment dynamics (zero-entropy,
/// fixed variance floor). Useful as an oracle "perfect model".
class TrueDynamicsModel {
 public:
  TrueDynamicsModel(const Environment& env, double variance = 1e-12) : env_(&env), logvar_(std::log(variance)) {}
  std::size_t num_members() const { return 1; }
  int state_dim() const { return env_->state_dim(); }
  int action_dim() const { return env_->action_dim(); }
  BatchPrediction predict_batch(std::size_t, const Mat& s, const Mat& a) const {
    BatchPrediction p{Mat(s.rows(), s.cols()), Mat::Constant(s.rows(), s.cols(), logvar_)};
    for (Eigen::Index j = 0; j < s.cols(); ++j) p.mean.col(j) = env_->transition(s.col(j), a.col(j));
    return p;
  }
  Vec reward_batch(const Mat& s, const Mat& a) const {
    Vec r(s.cols());
    for (Eigen::Index j = 0; j < s.cols(); ++j) r[j] = env_->reward(s.col(j), a.col(j));
    return r;
  }

 private:
  const Environment* env_;
  double logvar_;
};

}  // namespace mope2
