#pragma once

#include "logo/autodiff.hpp"
#include "logo/dataset.hpp"
#include "logo/nn.hpp"
#include "logo/synth.hpp"
#include "logo/world_model.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace logo {

struct PolicyLayout {
  EnvSpec spec;
  int hidden = 128;
  nn::MlpSpec q;                    // s (+) joint a -> scalar
  nn::MlpSpec q_target;             // lagged copy of q
  std::vector<nn::MlpSpec> actors;  // o^i -> a^i, tanh-squashed

  PolicyLayout(const EnvSpec& spec, int hidden);
};

struct PolicyHyper {
  double alpha = 1.0;      // CQL weight
  double bc_lambda = 2.5;  // BC weight, divided into mean |Q| at train time
  double gamma = 0.99;
  double tau = 0.005;
};

/// Central critic, its target copy and one deterministic actor per agent.
/// The store also holds "norm.state" and "norm.obs<i>" for input scaling.
class PolicyBundle {
 public:
  PolicyBundle(const EnvSpec& spec, int hidden, PolicyHyper hyper, std::uint64_t seed);
  PolicyBundle(PolicyLayout layout, PolicyHyper hyper, ad::ParamStore<float> params);

  const PolicyLayout& layout() const { return layout_; }
  const EnvSpec& spec() const { return layout_.spec; }
  const PolicyHyper& hyper() const { return hyper_; }
  PolicyHyper& hyper() { return hyper_; }
  ad::ParamStore<float>& params() { return params_; }
  const ad::ParamStore<float>& params() const { return params_; }

  void fit_normalizers(const Dataset& data);

  /// Deterministic per-agent actions for raw observations.
  std::vector<ad::Matrix<float>> act(const std::vector<ad::Matrix<float>>& obs) const;
  JointAction act(const JointObservation& obs) const;
  /// Q_target(s, a) for raw states and per-agent actions, [B,1].
  ad::Matrix<float> target_value(const ad::Matrix<float>& state, const std::vector<ad::Matrix<float>>& actions) const;

  /// target <- (1 - tau) * target + tau * online
  void polyak_update();

  void save(const std::filesystem::path& path) const;
  static PolicyBundle load(const std::filesystem::path& path);

 private:
  PolicyLayout layout_;
  PolicyHyper hyper_;
  ad::ParamStore<float> params_;
};

/// Training batch in network coordinates.
template <class T>
struct PolicyBatch {
  std::vector<ad::Matrix<T>> obs;       // normalized
  std::vector<ad::Matrix<T>> next_obs;  // normalized
  std::vector<ad::Matrix<T>> actions;
  ad::Matrix<T> state;       // normalized
  ad::Matrix<T> next_state;  // normalized
  ad::Matrix<T> reward;
  ad::Matrix<T> done;
  Eigen::Index rows() const { return state.rows(); }
};

template <class T>
PolicyBatch<T> normalize_policy_batch(const ad::ParamStore<T>& params, const EnvSpec& spec,
                                      const TransitionBatch& batch);

/// r + gamma * (1 - done) * next_value, element-wise over [B,1].
template <class T>
ad::Matrix<T> bellman_combine(const ad::Matrix<T>& reward, const ad::Matrix<T>& done,
                              const ad::Matrix<T>& next_value, double gamma);

/// r + gamma (1 - done) Q_target(s', pi(o')); plain values, no tape.
template <class T>
ad::Matrix<T> bellman_target(const ad::ParamStore<T>& params, const PolicyLayout& layout,
                             const PolicyBatch<T>& batch, double gamma);

/// Q(s, a) on `tape` for normalized states and per-agent actions.
template <class T>
ad::Var q_value(ad::Tape<T>& tape, const nn::MlpSpec& q, ad::Var state, const std::vector<ad::Var>& actions);
/// Per-agent actor outputs on `tape`.
template <class T>
std::vector<ad::Var> actor_outputs(ad::Tape<T>& tape, const PolicyLayout& layout,
                                   const std::vector<ad::Matrix<T>>& obs);

/// alpha * (mean Q(s, pi(s)) - mean Q(s, a)) + 1/2 mean (Q(s, a) - y)^2.
/// The policy action is detached; `targets` are constants.
template <class T>
ad::Var cql_q_loss(ad::Tape<T>& tape, const PolicyLayout& layout, const PolicyBatch<T>& batch,
                   const ad::Matrix<T>& targets, double alpha);

/// -mean Q(s, pi(o)) + lambda * mean_i mean ||pi_i(o^i) - a^i||^2. Q is held
/// fixed by the caller's trainable filter.
template <class T>
ad::Var policy_loss(ad::Tape<T>& tape, const PolicyLayout& layout, const PolicyBatch<T>& batch, double lambda);

/// policy_loss plus mean_i mean ||pi_i(o^i) - a_max^i||^2.
template <class T>
ad::Var mpc_policy_loss(ad::Tape<T>& tape, const PolicyLayout& layout, const PolicyBatch<T>& batch,
                        double lambda, const std::vector<ad::Matrix<T>>& a_max);

/// Trainable filters for the two alternating updates.
bool is_critic_param(const std::string& name);
bool is_actor_param(const std::string& name);

struct MpcChoice {
  std::vector<ad::Matrix<float>> actions;  // chosen per-agent actions
  std::vector<int> chosen;                 // candidate index per row
  ad::Matrix<float> scores;                // [B, k]
};

/// One-step lookahead over k candidates: candidate 0 is the policy mean, the
/// others add Gaussian noise (scale `noise`). Score r' + gamma Q_target(s', pi(o')).
/// Ties go to the lowest index.
MpcChoice mpc_select_action(const PolicyBundle& bundle, const WorldModel& model,
                            const std::vector<ad::Matrix<float>>& obs, const ad::Matrix<float>& state, int k,
                            Rng& rng, double noise = 0.2);

enum class SynthMode { Off, Weighted, RewardPenalty };

struct PolicyConfig {
  int hidden = 128;
  int steps = 5000;
  int batch_size = 128;
  double learning_rate = 3e-4;
  PolicyHyper hyper;
  int refresh_every = 1000;
  int eval_every = 0;  // 0 disables periodic evaluation
  int eval_episodes = 5;
  double divergence_limit = 1e6;
  SynthMode synth = SynthMode::Off;
  double lambda_pen = 1.0;
  bool mpc = false;
  int mpc_candidates = 3;
  double mpc_noise = 0.2;
  RolloutConfig rollout;
  std::uint64_t seed = 0;
};

struct PolicyLogRow {
  int step = 0;
  double q_loss = 0.0;
  double pi_loss = 0.0;
  double synthetic_share = 0.0;
  int buffer_size = 0;
  std::optional<double> eval_return;
};

struct PolicyTrainResult {
  PolicyBundle bundle;
  std::vector<PolicyLogRow> log;
};

/// Alternating critic and actor Adam steps with a Polyak update after each
/// step. The buffer is regenerated from `model` every `refresh_every` steps
/// when synthetic data is enabled; `model` is also required for MPC.
PolicyTrainResult train_policy(const Dataset& data, const WorldModel* model, const PolicyConfig& config);

void write_policy_log_csv(const std::filesystem::path& path, const std::vector<PolicyLogRow>& log);

struct EvalResult {
  double mean_return = 0.0;
  double std_return = 0.0;
  std::vector<double> returns;
};

using JointActor = std::function<JointAction(const ParticleEnv&, const EnvState&, const JointObservation&)>;

/// Runs full episodes in the real env; episode e resets from (seed, e).
EvalResult evaluate_actor(const EnvSpec& spec, const JointActor& actor, int episodes, std::uint64_t seed);
EvalResult evaluate(const PolicyBundle& bundle, int episodes, std::uint64_t seed);

/// Rows (seed, episode, return) with a header.
void write_eval_csv(const std::filesystem::path& path, std::uint64_t seed, const EvalResult& result);

}  // namespace logo
