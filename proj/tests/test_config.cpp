#include <string>

#include <gtest/gtest.h>

#include "mope2/config.hpp"

namespace {

using namespace mope2;

json minimal() { return {{"env", {{"name", "point_mass"}}}}; }

std::string config_error(const json& user, std::vector<std::string> overrides = {}) {
  try {
    resolve_config(user, overrides);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

TEST(Config, DeskPresetFillsEverythingButTheEnvironment) {
  const auto c = resolve_config(minimal());
  EXPECT_EQ(c.preset, "desk");
  EXPECT_EQ(c.env_name, "point_mass");
  EXPECT_EQ(c.hidden, (std::vector<int>{32, 32}));
  EXPECT_EQ(c.ensemble_size, 4);
}

TEST(Config, PaperPresetCarriesReferenceHyperparameters) {
  auto user = minimal();
  user["preset"] = "paper";
  const auto c = resolve_config(user);
  EXPECT_EQ(c.plan.num_candidates, 500);
  EXPECT_EQ(c.plan.horizon, 30);
  EXPECT_EQ(c.plan.elite_count, 100);
  EXPECT_EQ(c.plan.alpha, 0.01);
  EXPECT_EQ(c.plan.max_iterations, 20);
  EXPECT_EQ(c.plan.sigma0, 0.1);
  EXPECT_EQ(c.hidden, (std::vector<int>{500, 500, 500}));
  EXPECT_EQ(c.ensemble_size, 4);
  EXPECT_EQ(c.steps_per_epoch, 1000);
  EXPECT_EQ(c.schedule.e_min, 50);
  EXPECT_EQ(c.schedule.e_max, 300);
  EXPECT_EQ(c.schedule.beta_min, 0.0);
  EXPECT_EQ(c.schedule.beta_max, 1.0);
}

TEST(Config, MissingEnvironmentNameIsReported) {
  EXPECT_NE(config_error(json::object()).find("missing required key 'env.name'"), std::string::npos);
}

TEST(Config, UnknownKeysAreReportedWithTheirPath) {
  auto user = minimal();
  user["plan"] = {{"num_candidate", 10}};
  EXPECT_NE(config_error(user).find("plan.num_candidate"), std::string::npos);
  EXPECT_NE(config_error({{"env", {{"name", "point_mass"}, {"params", {{"goal", 1}}}}}}).find("env.params.goal"),
            std::string::npos);
  EXPECT_NE(config_error({{"env", {{"name", "point_mass"}}}, {"extra", 1}}).find("'extra'"), std::string::npos);
}

TEST(Config, WrongTypesNameTheKey) {
  auto user = minimal();
  user["plan"] = {{"horizon", "long"}};
  EXPECT_NE(config_error(user).find("plan.horizon"), std::string::npos);
}

TEST(Config, InvalidValuesBecomeConfigErrors) {
  auto user = minimal();
  user["plan"] = {{"alpha", 0.0}};
  EXPECT_FALSE(config_error(user).empty());
  EXPECT_FALSE(config_error(minimal(), {"schedule.mode=sometimes"}).empty());
  EXPECT_FALSE(config_error({{"env", {{"name", "hopper"}}}}).empty());
  EXPECT_FALSE(config_error({{"preset", "huge"}, {"env", {{"name", "pendulum"}}}}).empty());
}

TEST(Config, OverridesParseJsonValues) {
  const auto c = resolve_config(minimal(), {"plan.horizon=7", "schedule.mode=off", "env.params.goal_x=-1.25",
                                            "model.hidden=[4,4]"});
  EXPECT_EQ(c.plan.horizon, 7);
  EXPECT_EQ(c.schedule.mode, ScheduleMode::Off);
  EXPECT_EQ(c.env_params["goal_x"], -1.25);
  EXPECT_EQ(c.hidden, (std::vector<int>{4, 4}));
  EXPECT_THROW(resolve_config(minimal(), {"no-equals-sign"}), ConfigError);
}

TEST(Config, JsonRoundTripIsStable) {
  const auto c = resolve_config(minimal(), {"seed=42", "schedule.beta_max=0.5"});
  const json j = to_json(c);
  const auto back = from_json(j);
  EXPECT_EQ(to_json(back).dump(), j.dump());
  EXPECT_EQ(back.seed, 42u);
  EXPECT_EQ(back.schedule.beta_max, 0.5);
  // The resolved document also resolves to itself.
  EXPECT_EQ(to_json(resolve_config(j)).dump(), j.dump());
}

}  // namespace
