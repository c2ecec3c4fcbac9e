#pragma once

#include "logo/dataset.hpp"
#include "logo/envs.hpp"
#include "logo/policy.hpp"
#include "logo/synth.hpp"
#include "logo/world_model.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace logo {

/// Raised for malformed or unknown configuration entries; `field()` names the key.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::invalid_argument(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct AblationSwitches {
  bool disable_buffer = false;
  bool reward_penalty = false;
  double lambda_pen = 1.0;
  bool direct_state = true;
  int ensemble_k = 5;
  int ensemble_steps = 300;
  bool mpc = false;
  std::vector<int> horizons{5, 10, 15, 20};
  std::vector<Provenance> mpc_tiers{Provenance::MediumReplay, Provenance::Medium, Provenance::Expert,
                                     Provenance::Mixed};
  int timing_trajectories = 500;
  int timing_steps = 10;
  int timing_repetitions = 5;
  int pca_points = 100;
};

struct ExperimentConfig {
  EnvSpec env;
  Provenance tier = Provenance::Medium;
  int episodes = 200;
  double val_fraction = 0.2;
  WorldModelConfig wm;
  RolloutConfig rollout;  // clip_constant 0 selects the calibrated value
  PolicyConfig policy;
  int eval_episodes = 20;
  AblationSwitches ablation;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::string experiment = "default";
  std::string out;  // empty: $LOGO_OUT, else "runs"

  ExperimentConfig();

  /// Sets one dotted key from its text form; throws ConfigError.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  void validate() const;

  /// Every key in schema order, defaults expanded, one "key = value" per line.
  std::string to_text() const;
  std::filesystem::path output_root() const;
  /// Policy settings with env-derived and ablation-derived fields filled in.
  PolicyConfig resolved_policy(std::uint64_t seed, double calibrated_c) const;
};

struct ConfigKey {
  std::string key;
  std::string doc;
};
/// The documented schema, in order.
const std::vector<ConfigKey>& config_schema();

/// Parses "key = value" lines; '#' starts a comment. Unknown or repeated keys throw ConfigError.
ExperimentConfig parse_config(const std::string& text, ExperimentConfig base = {});
ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base = {});

}  // namespace logo
