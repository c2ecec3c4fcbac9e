#pragma once

#include "logo/autodiff.hpp"
#include "logo/container.hpp"
#include "logo/envs.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace logo {

enum class Provenance : int {
  Random = 0,
  Medium = 1,
  Expert = 2,
  Mixed = 3,
  Synthetic = 4,
  MediumReplay = 5,
};

std::string to_string(Provenance p);
Provenance provenance_from_string(const std::string& name);

struct Transition {
  JointObservation obs;
  Eigen::VectorXf state;
  JointAction actions;
  Eigen::VectorXf next_state;
  JointObservation next_obs;
  float reward = 0.0f;
  bool done = false;
  /// Confidence P_u; only synthetic transitions carry one.
  std::optional<float> priority;
  /// Dual-path uncertainty u recorded at generation time (synthetic only).
  std::optional<float> uncertainty;
  int episode = 0;
  int step = 0;
  Provenance source = Provenance::Random;
};

class EnvMismatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Dataset {
  EnvSpec spec;
  Provenance provenance = Provenance::Random;
  std::vector<Transition> transitions;

  std::size_t size() const { return transitions.size(); }
  bool empty() const { return transitions.empty(); }
  /// Distinct episode ids in first-appearance order.
  std::vector<int> episode_ids() const;
  /// Undiscounted return of every episode, in episode_ids() order.
  std::vector<double> episode_returns() const;
};

/// Scripted behaviour: a proportional controller toward the agent's landmark,
/// plus Gaussian action noise whose scale depends on the tier.
struct BehaviorSpec {
  Provenance tier = Provenance::Medium;
  float gain = 3.0f;
  float expert_noise = 0.05f;
  float medium_noise = 0.4f;
  /// Share of random episodes mixed into the medium-replay tier.
  double replay_random_share = 0.2;
};

/// The noiseless controller used by every scripted tier.
JointAction expert_action(const ParticleEnv& env, const Eigen::VectorXf& s, float gain = 3.0f);

/// Rolls the behaviour policy for `episodes` episodes. Episode e uses the
/// stream derived from (seed, e), so episodes are independent of each other.
/// Mixed is half medium then half expert; medium-replay draws each episode
/// as random with probability replay_random_share and medium otherwise.
Dataset collect(const EnvSpec& spec, const BehaviorSpec& behavior, int episodes, std::uint64_t seed);

Container dataset_to_container(const Dataset& ds);
Dataset dataset_from_container(const Container& c);
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);
/// As load_dataset, but raises EnvMismatchError when the file was produced
/// under a different EnvSpec.
Dataset load_dataset_for_training(const std::filesystem::path& path, const EnvSpec& expected);

/// Episode-aligned split; round(val_fraction * episodes) episodes go to validation.
std::pair<Dataset, Dataset> split(const Dataset& ds, double val_fraction, std::uint64_t seed);

/// Column-major view of a set of transitions, one row per sample.
struct TransitionBatch {
  std::vector<ad::Matrix<float>> obs;
  std::vector<ad::Matrix<float>> actions;
  std::vector<ad::Matrix<float>> next_obs;
  ad::Matrix<float> state;
  ad::Matrix<float> next_state;
  ad::Matrix<float> reward;  // [B,1]
  ad::Matrix<float> done;    // [B,1]

  Eigen::Index rows() const { return state.rows(); }
  ad::Matrix<float> joint_actions() const;
};

TransitionBatch make_batch(std::span<const Transition* const> rows);
TransitionBatch make_batch(const Dataset& ds, std::span<const std::size_t> indices);
TransitionBatch make_batch(const Dataset& ds);

}  // namespace logo
