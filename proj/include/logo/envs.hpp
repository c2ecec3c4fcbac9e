#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace logo {

enum class ActionKind { Continuous, Discrete };

/// Cooperative particle-navigation task. Agent i steers toward landmark i in
/// the arena [-1, 1]^2 under a shared reward.
///
/// Global state layout (state_dim = 6n):
///   [ positions (2n) | velocities (2n) | landmarks (2n) ]
/// Observation of agent i (obs_dim = 6 + 2(n-1)):
///   [ own position (2) | own velocity (2) | landmark_i - position_i (2) |
///     position_j - position_i for each j != i in index order, zeroed when
///     farther than sensing_radius (2 each) ]
struct EnvSpec {
  int n_agents = 2;
  int episode_cap = 25;
  float gamma = 0.99f;
  float sensing_radius = 1.0f;
  float dt = 0.1f;
  float max_speed = 1.0f;
  float collision_distance = 0.1f;
  float collision_penalty = 0.25f;
  ActionKind action_kind = ActionKind::Continuous;

  int state_dim() const { return 6 * n_agents; }
  int obs_dim() const { return 6 + 2 * (n_agents - 1); }
  int action_dim() const { return 2; }
  int joint_obs_dim() const { return n_agents * obs_dim(); }
  int joint_action_dim() const { return n_agents * action_dim(); }

  /// Upper bound on -reward: arena diagonal plus the penalty for every pair.
  float reward_bound() const;

  void validate() const;
  std::vector<float> encode() const;
  static EnvSpec decode(std::span<const float> values);

  bool operator==(const EnvSpec&) const = default;
};

using JointObservation = std::vector<Eigen::VectorXf>;
using JointAction = std::vector<Eigen::VectorXf>;

struct EnvState {
  Eigen::VectorXf s;
  int step = 0;
  std::uint64_t seed = 0;
};

struct StepResult {
  EnvState state;
  JointObservation obs;
  float reward = 0.0f;
  bool done = false;
  /// Set when some action component fell outside [-1, 1] and was clipped.
  bool clipped = false;
  /// The joint action after clipping, as actually applied.
  JointAction applied;
};

class ParticleEnv {
 public:
  explicit ParticleEnv(EnvSpec spec);

  const EnvSpec& spec() const { return spec_; }

  /// Positions and landmarks uniform in the arena; velocities zero.
  std::pair<EnvState, JointObservation> reset(std::uint64_t seed) const;
  StepResult step(const EnvState& state, const JointAction& action) const;

  Eigen::VectorXf observe(const Eigen::VectorXf& s, int agent) const;
  Eigen::VectorXf observe(const EnvState& state, int agent) const { return observe(state.s, agent); }
  JointObservation observe_all(const Eigen::VectorXf& s) const;

  /// Shared reward of a state: -(mean agent-landmark distance) - penalty per close pair.
  float reward(const Eigen::VectorXf& s) const;
  double mean_landmark_distance(const Eigen::VectorXf& s) const;

  /// Inverts the observation map; exact whenever every observation carries
  /// its own position, velocity and landmark offset.
  Eigen::VectorXf state_from_observations(const JointObservation& obs) const;

  Eigen::Vector2f position(const Eigen::VectorXf& s, int agent) const;
  Eigen::Vector2f landmark(const Eigen::VectorXf& s, int agent) const;

 private:
  EnvSpec spec_;
};

/// Small enumerable MDP over a joint action set, used by the oracles.
struct TabularMDP {
  int num_states = 0;
  int num_actions = 0;
  double gamma = 0.9;
  /// transition[(s * A + a) * S + s']
  std::vector<double> transition;
  /// reward[s * A + a]
  std::vector<double> reward;

  double p(int s, int a, int next) const {
    return transition[static_cast<std::size_t>((s * num_actions + a) * num_states + next)];
  }
  double r(int s, int a) const { return reward[static_cast<std::size_t>(s * num_actions + a)]; }

  /// Throws std::invalid_argument unless sizes fit the limits and every row sums to 1 +- 1e-9.
  void validate() const;

  /// Dense random dynamics; rewards uniform in [-1, 1].
  static TabularMDP random(int states, int actions, double gamma, std::uint64_t seed);
  /// Deterministic chain: action 0 steps left, action 1 steps right; reward 1
  /// for arriving at the right end, 0 elsewhere.
  static TabularMDP chain(int states, double gamma);
};

struct TabularEntry {
  int state = 0;
  int action = 0;
  std::vector<double> next_distribution;
  double reward = 0.0;
};

/// Every (s, a) pair in index order.
std::vector<TabularEntry> tabular_enumerate(const TabularMDP& mdp);

}  // namespace logo
