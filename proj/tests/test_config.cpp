#include "doctest.h"

#include "logo/config.hpp"

#include <cstdlib>

using namespace logo;

namespace {

std::string field_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "";
}

}  // namespace

TEST_CASE("defaults validate and read back") {
  const ExperimentConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.get("env.n_agents") == "2");
  CHECK(c.get("data.tier") == "medium");
  CHECK(c.get("run.seeds") == "0,1,2,3,4");
  CHECK(c.get("rollout.clip_constant") == "0");
}

TEST_CASE("set and get") {
  ExperimentConfig c;
  c.set("wm.steps", "17");
  c.set("data.tier", "expert");
  c.set("ablation.horizons", "3, 4");
  c.set("ablation.mpc", "yes");
  CHECK(c.wm.steps == 17);
  CHECK(c.tier == Provenance::Expert);
  CHECK(c.ablation.horizons == std::vector<int>{3, 4});
  CHECK(c.ablation.mpc);
  CHECK(c.get("ablation.horizons") == "3,4");
}

TEST_CASE("malformed values name their key") {
  ExperimentConfig c;
  CHECK(field_of([&] { c.set("wm.steps", "many"); }) == "wm.steps");
  CHECK(field_of([&] { c.set("wm.lr", "1e-3x"); }) == "wm.lr");
  CHECK(field_of([&] { c.set("ablation.mpc", "maybe"); }) == "ablation.mpc");
  CHECK(field_of([&] { c.set("data.tier", "great"); }) == "data.tier");
  CHECK(field_of([&] { c.set("run.seeds", "1,-2"); }) == "run.seeds");
  CHECK(field_of([&] { c.set("wm.nonsense", "1"); }) == "wm.nonsense");
}

TEST_CASE("config text parsing") {
  const ExperimentConfig c = parse_config("# comment\nwm.steps = 5  # trailing\n\npolicy.alpha=0.5\n");
  CHECK(c.wm.steps == 5);
  CHECK(c.policy.hyper.alpha == 0.5);
  CHECK(field_of([] { parse_config("wm.steps = 1\nwm.steps = 2\n"); }) == "wm.steps");
  CHECK(field_of([] { parse_config("bogus.key = 1\n"); }) == "bogus.key");
  CHECK(field_of([] { parse_config("no equals sign\n"); }) == "line 1");
}

TEST_CASE("validation rejects out-of-range values") {
  const std::vector<std::pair<std::string, std::string>> bad{
      {"data.val_fraction", "0.5"}, {"data.val_fraction", "0"}, {"data.episodes", "1"},
      {"policy.batch", "7"},        {"policy.tau", "0"},         {"wm.hidden", "0"},
      {"rollout.horizon", "0"},     {"ablation.pca_points", "2"}, {"ablation.horizons", "5,0"}};
  for (const auto& [key, value] : bad) {
    ExperimentConfig c;
    c.set(key, value);
    CAPTURE(key);
    CHECK(field_of([&] { c.validate(); }) == key);
  }
  ExperimentConfig c;
  c.set("env.n_agents", "0");
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("to_text round trips every key") {
  ExperimentConfig c;
  c.set("wm.steps", "123");
  c.set("ablation.mpc_tiers", "expert,medium");
  c.set("run.experiment", "roundtrip");
  c.set("env.gamma", "0.95");
  const std::string text = c.to_text();
  const ExperimentConfig back = parse_config(text);
  CHECK(back.to_text() == text);
  for (const auto& k : config_schema()) CHECK(back.get(k.key) == c.get(k.key));
}

TEST_CASE("output root precedence") {
  ExperimentConfig c;
  ::unsetenv("LOGO_OUT");
  CHECK(c.output_root() == "runs");
  ::setenv("LOGO_OUT", "/tmp/logo-env-out", 1);
  CHECK(c.output_root() == "/tmp/logo-env-out");
  c.out = "explicit";
  CHECK(c.output_root() == "explicit");
  ::unsetenv("LOGO_OUT");
}

TEST_CASE("resolved policy picks the synthetic mode") {
  ExperimentConfig c;
  CHECK(c.resolved_policy(1, 2.0).synth == SynthMode::Weighted);
  CHECK(c.resolved_policy(1, 2.0).rollout.clip_constant == 2.0);
  c.ablation.reward_penalty = true;
  CHECK(c.resolved_policy(1, 2.0).synth == SynthMode::RewardPenalty);
  c.ablation.disable_buffer = true;
  CHECK(c.resolved_policy(1, 2.0).synth == SynthMode::Off);
  c.rollout.clip_constant = 0.7;
  CHECK(c.resolved_policy(1, 2.0).rollout.clip_constant == 0.7);
  CHECK(c.resolved_policy(9, 0).hyper.gamma == doctest::Approx(c.env.gamma));
}
