#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mope2/agent.hpp"
#include "mope2/errors.hpp"

namespace mope2 {

using nlohmann::json;

/// Named parameter presets. "paper" carries the published hyper-parameter
/// table; "desk" is scaled down for single-core runs. Neither names an
/// environment: env.name is always required from the user.
inline json preset(const std::string& name) {
  if (name == "desk") {
    return {
        {"preset", "desk"},
        {"seed", 0},
        {"env", {{"horizon", 50}, {"process_noise", 0.0}, {"params", json::object()}}},
        {"model", {{"hidden", {32, 32}}, {"ensemble_size", 4}, {"logvar_min", -10.0}, {"logvar_max", 4.0}}},
        {"train",
         {{"epochs", 30},
          {"reward_epochs", 30},
          {"batch_size", 32},
          {"learning_rate", 1e-3},
          {"weight_decay", 0.0},
          {"bootstrap", true}}},
        {"plan",
         {{"num_candidates", 100},
          {"horizon", 30},
          {"elite_count", 10},
          {"alpha", 0.5},
          {"max_iterations", 5},
          {"convergence_tol", 1e-3},
          {"gamma", 1.0},
          {"mu0", 0.0},
          {"sigma0", 0.5},
          {"variance_floor", 1e-6},
          {"fit_first_action_only", false}}},
        {"schedule",
         {{"mode", "progressive"}, {"beta_min", 0.0}, {"beta_max", 1.0}, {"e_min", 1}, {"e_max", 4}, {"fixed_beta", 1.0}}},
        {"run",
         {{"steps_per_epoch", 100}, {"total_epochs", 10}, {"warmup_epochs", 1}, {"eval_episodes", 2}, {"workers", 1}}},
    };
  }
  if (name == "paper") {
    return {
        {"preset", "paper"},
        {"seed", 0},
        {"env", {{"horizon", 1000}, {"process_noise", 0.0}, {"params", json::object()}}},
        {"model", {{"hidden", {500, 500, 500}}, {"ensemble_size", 4}, {"logvar_min", -10.0}, {"logvar_max", 4.0}}},
        {"train",
         {{"epochs", 5},
          {"reward_epochs", 5},
          {"batch_size", 256},
          {"learning_rate", 1e-3},
          {"weight_decay", 0.0},
          {"bootstrap", true}}},
        {"plan",
         {{"num_candidates", 500},
          {"horizon", 30},
          {"elite_count", 100},
          {"alpha", 0.01},
          {"max_iterations", 20},
          {"convergence_tol", 1e-3},
          {"gamma", 1.0},
          {"mu0", 0.0},
          {"sigma0", 0.1},
          {"variance_floor", 1e-6},
          {"fit_first_action_only", false}}},
        {"schedule",
         {{"mode", "progressive"}, {"beta_min", 0.0}, {"beta_max", 1.0}, {"e_min", 50}, {"e_max", 300}, {"fixed_beta", 1.0}}},
        {"run",
         {{"steps_per_epoch", 1000}, {"total_epochs", 400}, {"warmup_epochs", 1}, {"eval_episodes", 1}, {"workers", 1}}},
    };
  }
  throw ConfigError("unknown preset '" + name + "' (expected desk or paper)");
}

namespace detail {

inline std::string join_key(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

// Overlays `user` onto `base`, rejecting keys the base schema does not have.
// env.params is free-form here and validated by the environment factory.
inline void merge_checked(json& base, const json& user, const std::string& prefix) {
  if (!user.is_object()) throw ConfigError("'" + (prefix.empty() ? std::string("<root>") : prefix) + "' must be an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const auto path = join_key(prefix, it.key());
    if (path == "env.name" || path == "env.params") {
      if (path == "env.params" && !it->is_object()) throw ConfigError("'env.params' must be an object");
      if (path == "env.params") {
        for (auto p = it->begin(); p != it->end(); ++p) base["params"][p.key()] = *p;
      } else {
        base["name"] = *it;
      }
      continue;
    }
    if (!base.contains(it.key())) throw ConfigError("unknown key '" + path + "'");
    auto& slot = base[it.key()];
    if (slot.is_object()) {
      merge_checked(slot, *it, path);
    } else {
      slot = *it;
    }
  }
}

template <typename T>
T get_key(const json& root, const std::string& dotted) {
  const json* cur = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted.find('.', start);
    const auto part = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!cur->is_object() || !cur->contains(part)) throw ConfigError("missing required key '" + dotted + "'");
    cur = &(*cur)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  try {
    return cur->get<T>();
  } catch (const json::exception&) {
    throw ConfigError("key '" + dotted + "' has the wrong type (got " + cur->dump() + ")");
  }
}

inline void set_dotted(json& root, const std::string& dotted, json value) {
  json* cur = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted.find('.', start);
    const auto part = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("malformed key '" + dotted + "'");
    if (dot == std::string::npos) {
      (*cur)[part] = std::move(value);
      return;
    }
    if (!cur->contains(part) || !(*cur)[part].is_object()) (*cur)[part] = json::object();
    cur = &(*cur)[part];
    start = dot + 1;
  }
}

}  // namespace detail

/// Applies a "dotted.key=value" override. The value is parsed as JSON when
/// possible and kept as a plain string otherwise.
inline void apply_override(json& user, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: '" + assignment + "'");
  const auto key = assignment.substr(0, eq);
  const auto raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  detail::set_dotted(user, key, std::move(value));
}

/// Fully explicit JSON for a configuration (every default materialized).
inline json to_json(const RunConfig& c) {
  auto env = c.make_env();
  json params = env->parameters();
  return {
      {"preset", c.preset},
      {"seed", c.seed},
      {"env", {{"name", c.env_name}, {"horizon", c.env_horizon}, {"process_noise", c.env_process_noise}, {"params", params}}},
      {"model", {{"hidden", c.hidden}, {"ensemble_size", c.ensemble_size}, {"logvar_min", c.logvar_min}, {"logvar_max", c.logvar_max}}},
      {"train",
       {{"epochs", c.train.epochs},
        {"reward_epochs", c.train.reward_epochs},
        {"batch_size", c.train.batch_size},
        {"learning_rate", c.train.adam.learning_rate},
        {"weight_decay", c.train.adam.weight_decay},
        {"bootstrap", c.train.bootstrap}}},
      {"plan",
       {{"num_candidates", c.plan.num_candidates},
        {"horizon", c.plan.horizon},
        {"elite_count", c.plan.elite_count},
        {"alpha", c.plan.alpha},
        {"max_iterations", c.plan.max_iterations},
        {"convergence_tol", c.plan.convergence_tol},
        {"gamma", c.plan.gamma},
        {"mu0", c.plan.mu0},
        {"sigma0", c.plan.sigma0},
        {"variance_floor", c.plan.variance_floor},
        {"fit_first_action_only", c.plan.fit_first_action_only}}},
      {"schedule",
       {{"mode", to_string(c.schedule.mode)},
        {"beta_min", c.schedule.beta_min},
        {"beta_max", c.schedule.beta_max},
        {"e_min", c.schedule.e_min},
        {"e_max", c.schedule.e_max},
        {"fixed_beta", c.schedule.fixed_beta}}},
      {"run",
       {{"steps_per_epoch", c.steps_per_epoch},
        {"total_epochs", c.total_epochs},
        {"warmup_epochs", c.warmup_epochs},
        {"eval_episodes", c.eval_episodes},
        {"workers", c.workers}}},
  };
}

/// Parses a complete configuration document.
inline RunConfig from_json(const json& j) {
  using detail::get_key;
  RunConfig c;
  c.preset = get_key<std::string>(j, "preset");
  c.seed = get_key<std::uint64_t>(j, "seed");
  c.env_name = get_key<std::string>(j, "env.name");
  c.env_horizon = get_key<int>(j, "env.horizon");
  c.env_process_noise = get_key<double>(j, "env.process_noise");
  c.env_params = get_key<json>(j, "env.params");
  c.hidden = get_key<std::vector<int>>(j, "model.hidden");
  c.ensemble_size = get_key<int>(j, "model.ensemble_size");
  c.logvar_min = get_key<double>(j, "model.logvar_min");
  c.logvar_max = get_key<double>(j, "model.logvar_max");
  c.train.epochs = get_key<int>(j, "train.epochs");
  c.train.reward_epochs = get_key<int>(j, "train.reward_epochs");
  c.train.batch_size = get_key<int>(j, "train.batch_size");
  c.train.adam.learning_rate = get_key<double>(j, "train.learning_rate");
  c.train.adam.weight_decay = get_key<double>(j, "train.weight_decay");
  c.train.bootstrap = get_key<bool>(j, "train.bootstrap");
  c.plan.num_candidates = get_key<int>(j, "plan.num_candidates");
  c.plan.horizon = get_key<int>(j, "plan.horizon");
  c.plan.elite_count = get_key<int>(j, "plan.elite_count");
  c.plan.alpha = get_key<double>(j, "plan.alpha");
  c.plan.max_iterations = get_key<int>(j, "plan.max_iterations");
  c.plan.convergence_tol = get_key<double>(j, "plan.convergence_tol");
  c.plan.gamma = get_key<double>(j, "plan.gamma");
  c.plan.mu0 = get_key<double>(j, "plan.mu0");
  c.plan.sigma0 = get_key<double>(j, "plan.sigma0");
  c.plan.variance_floor = get_key<double>(j, "plan.variance_floor");
  c.plan.fit_first_action_only = get_key<bool>(j, "plan.fit_first_action_only");
  try {
    c.schedule.mode = schedule_mode_from_string(get_key<std::string>(j, "schedule.mode"));
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("key 'schedule.mode': ") + e.what());
  }
  c.schedule.beta_min = get_key<double>(j, "schedule.beta_min");
  c.schedule.beta_max = get_key<double>(j, "schedule.beta_max");
  c.schedule.e_min = get_key<int>(j, "schedule.e_min");
  c.schedule.e_max = get_key<int>(j, "schedule.e_max");
  c.schedule.fixed_beta = get_key<double>(j, "schedule.fixed_beta");
  c.steps_per_epoch = get_key<int>(j, "run.steps_per_epoch");
  c.total_epochs = get_key<int>(j, "run.total_epochs");
  c.warmup_epochs = get_key<int>(j, "run.warmup_epochs");
  c.eval_episodes = get_key<int>(j, "run.eval_episodes");
  c.workers = get_key<std::size_t>(j, "run.workers");
  return c;
}

/// User document + overrides -> validated configuration. The user document
/// may name a preset ("desk" by default) and must set env.name.
inline RunConfig resolve_config(json user, const std::vector<std::string>& overrides = {}) {
  if (!user.is_object()) throw ConfigError("configuration root must be an object");
  for (const auto& o : overrides) apply_override(user, o);
  std::string preset_name = "desk";
  if (user.contains("preset")) {
    if (!user["preset"].is_string()) throw ConfigError("key 'preset' must be a string");
    preset_name = user["preset"].get<std::string>();
  }
  json merged = preset(preset_name);
  detail::merge_checked(merged, user, "");
  RunConfig c = from_json(merged);
  try {
    (void)c.make_env();
    c.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

}  // namespace mope2
