#pragma once

#include "logo/dataset.hpp"
#include "logo/envs.hpp"
#include "logo/nn.hpp"
#include "logo/world_model.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

namespace logo {

// ---------------------------------------------------------------- tabular

struct QTable {
  int num_states = 0;
  int num_actions = 0;
  double gamma = 0.0;
  double tolerance = 0.0;
  double residual = 0.0;
  int iterations = 0;
  std::vector<double> values;  // values[s * A + a]

  double at(int s, int a) const { return values[static_cast<std::size_t>(s * num_actions + a)]; }
  double state_value(int s) const;
};

/// One application of the optimal Bellman operator.
std::vector<double> bellman_backup(const TabularMDP& mdp, const std::vector<double>& q);

/// Iterates the Bellman operator until the sup-norm residual is below `tol`.
QTable value_iteration(const TabularMDP& mdp, double tol);

struct ErrorInjection {
  double eps_state = 0.0;
  double eps_reward = 0.0;
  double eps_q = 0.0;
};

double theorem1_bound(double lipschitz_r, double lipschitz_q, double gamma, const ErrorInjection& inj);

struct Theorem1Report {
  double lipschitz_r = 0.0;
  double lipschitz_q = 0.0;
  double bound = 0.0;
  double max_error = 0.0;
  int trials = 0;
  int violations = 0;
  bool pass() const { return violations == 0; }
};

/// States sit on the integer line; r(., a) and Q*(., a) are extended to it
/// by linear interpolation, so their Lipschitz constants are the largest
/// neighbour differences. Each trial moves every state (current and
/// successor) by at most eps_state, perturbs rewards by at most eps_reward
/// and bootstrapped values by at most eps_q, recomputes the one-step backup
/// and compares it with Q*.
Theorem1Report theorem1_check(const TabularMDP& mdp, const ErrorInjection& inj, int trials, std::uint64_t seed,
                              double tol = 1e-10);

// ---------------------------------------------------------------- baselines

/// (s, joint a) -> Gaussian over s', same building blocks as one agent's
/// predictive model.
struct DirectModelLayout {
  EnvSpec spec;
  int hidden = 128;
  nn::MlpSpec state_encoder;
  nn::MlpSpec action_encoder;
  nn::GaussianHead head;

  DirectModelLayout(const EnvSpec& spec, int hidden, const std::string& prefix = "direct");
  /// Parameters on the prediction path (log-std excluded).
  std::size_t inference_parameter_count() const;
};

/// Width whose direct-model inference budget is closest to `budget`.
int direct_width_for_budget(const EnvSpec& spec, std::size_t budget);

class DirectModel {
 public:
  DirectModel(const EnvSpec& spec, int hidden, std::uint64_t seed);
  const DirectModelLayout& layout() const { return layout_; }
  ad::ParamStore<float>& params() { return params_; }
  const ad::ParamStore<float>& params() const { return params_; }
  void fit_normalizers(const Dataset& train);
  /// Mean next state for raw states and per-agent actions.
  ad::Matrix<float> predict(const ad::Matrix<float>& state, const std::vector<ad::Matrix<float>>& actions) const;

 private:
  DirectModelLayout layout_;
  ad::ParamStore<float> params_;
};

template <class T>
ad::Var direct_loss(ad::Tape<T>& tape, const DirectModelLayout& layout, const ad::ParamStore<T>& params,
                    const TransitionBatch& batch);

double direct_state_mse(const DirectModel& model, const Dataset& data);

struct DirectBaselineResult {
  DirectModel model;
  double heldout_mse = 0.0;
};

/// Trains with the world model's optimiser settings (steps, lr, batch) at
/// the given width.
DirectBaselineResult direct_state_baseline(const Dataset& train, const Dataset& heldout, const WorldModelConfig& config,
                                           int width, std::uint64_t seed);

struct EnsemblePrediction {
  ad::Matrix<float> mean;
  Eigen::VectorXf spread;  // L2 norm of the per-dimension member std
};

class Ensemble {
 public:
  explicit Ensemble(std::vector<DirectModel> members) : members_(std::move(members)) {}
  const std::vector<DirectModel>& members() const { return members_; }
  EnsemblePrediction predict(const ad::Matrix<float>& state, const std::vector<ad::Matrix<float>>& actions) const;

 private:
  std::vector<DirectModel> members_;
};

/// k members trained from seeds derived from (seed, m); `same_seed` forces a
/// single seed for every member.
Ensemble ensemble_baseline(const Dataset& train, const Dataset& heldout, const WorldModelConfig& config, int width,
                           int k, std::uint64_t seed, bool same_seed = false);

struct TimingResult {
  std::vector<double> seconds;  // one per repetition
  double median = 0.0;
};

/// Median wall-clock of `repetitions` runs of `fn` after one warm-up call.
TimingResult time_median(const std::function<void()>& fn, int repetitions = 5);

/// Batched open-loop rollouts: `trajectories` rows advanced `steps` times.
/// Actions are drawn once from (seed) so both timed models see the same inputs.
struct TimingWorkload {
  ModelInput start;
  std::vector<std::vector<ad::Matrix<float>>> actions;  // per step, per agent
};
TimingWorkload make_timing_workload(const Dataset& data, int trajectories, int steps, std::uint64_t seed);
void run_logo_workload(const WorldModel& model, const TimingWorkload& w);
void run_ensemble_workload(const Ensemble& ensemble, const TimingWorkload& w);

// ---------------------------------------------------------------- PCA

struct PcaResult {
  ad::Matrix<double> components;  // k x d, orthonormal rows
  ad::Matrix<double> projected;   // n x k
  std::vector<double> explained_ratio;
  bool rank_deficient = false;
};

/// Mean-centred projection on the top-k principal directions, found by power
/// iteration with deflation on the covariance matrix.
PcaResult pca_project(const ad::Matrix<double>& points, int k = 2, double tol = 1e-9, int max_iterations = 10000);

void write_pca_csv(const std::filesystem::path& path, const PcaResult& pca, const std::vector<std::string>& labels);

}  // namespace logo
