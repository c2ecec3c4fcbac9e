#pragma once

#include "logo/autodiff.hpp"
#include "logo/dataset.hpp"
#include "logo/envs.hpp"
#include "logo/nn.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace logo {

/// Networks of one agent's local predictive model.
struct PredictiveModelLayout {
  nn::MlpSpec state_encoder;       // s -> h_s
  nn::MlpSpec obs_action_encoder;  // o^i (+) a^i -> h_oa
  nn::GaussianHead obs_head;       // E_p: h_s (+) h_oa -> o^i_{t+1}
  nn::MlpSpec obs_decoder;         // R_p: o^i_{t+1} -> o^i_t (+) a^i_t
  nn::GaussianHead aux_head;       // E_ps: h_s (+) h_oa -> s_{t+1} (+) r_t
};

/// Local-to-global deductive model.
struct DeductiveModelLayout {
  nn::GaussianHead encoder;  // E_d: s_{t+1} (+) r_t -> joint o_{t+1}
  nn::MlpSpec decoder;       // R_d: joint o_{t+1} -> s_{t+1} (+) r_t
};

struct WorldModelLayout {
  EnvSpec spec;
  int hidden = 128;
  std::vector<PredictiveModelLayout> agents;
  DeductiveModelLayout deductive;

  WorldModelLayout(const EnvSpec& spec, int hidden);
  /// Parameters on the path used at inference to produce s' (encoders, E_p, R_d).
  std::size_t inference_parameter_count() const;
  std::size_t parameter_count() const;
};

/// Normalizer names inside the parameter store.
inline const std::string kStateNorm = "norm.state";
inline const std::string kRewardNorm = "norm.reward";
std::string obs_norm_name(int agent);

class WorldModel {
 public:
  WorldModel(const EnvSpec& spec, int hidden, std::uint64_t seed);
  WorldModel(WorldModelLayout layout, ad::ParamStore<float> params);

  const WorldModelLayout& layout() const { return layout_; }
  const EnvSpec& spec() const { return layout_.spec; }
  ad::ParamStore<float>& params() { return params_; }
  const ad::ParamStore<float>& params() const { return params_; }

  /// Standardisation statistics for states, per-agent observations and rewards.
  void fit_normalizers(const Dataset& train);

  /// Everything except the normalizer statistics.
  static bool trainable(const std::string& name);

  void save(const std::filesystem::path& path) const;
  static WorldModel load(const std::filesystem::path& path);

 private:
  WorldModelLayout layout_;
  ad::ParamStore<float> params_;
};

/// A batch expressed in normalized coordinates.
template <class T>
struct WorldBatch {
  std::vector<ad::Matrix<T>> obs;
  std::vector<ad::Matrix<T>> actions;
  std::vector<ad::Matrix<T>> next_obs;
  ad::Matrix<T> state;
  /// s_{t+1} (+) r_t
  ad::Matrix<T> next_state_reward;
  Eigen::Index rows() const { return state.rows(); }
};

template <class T>
WorldBatch<T> normalize_batch(const ad::ParamStore<T>& params, const EnvSpec& spec,
                              const TransitionBatch& batch);

/// Standard-normal draws behind the reparameterized samples of one step.
struct WorldNoise {
  std::vector<ad::Matrix<double>> obs;  // per agent, for o-hat ~ E_p
  ad::Matrix<double> joint_obs;         // for o' ~ E_d
};
WorldNoise draw_world_noise(const EnvSpec& spec, Eigen::Index rows, Rng& rng);
/// All-zero noise; samples collapse to the means.
WorldNoise zero_world_noise(const EnvSpec& spec, Eigen::Index rows);

struct WorldLosses {
  ad::Var predictive;   // L_p
  ad::Var deductive;    // L_d
  ad::Var deduce_reg;   // L_{R_d}
  ad::Var uncertainty;  // L_{E_ps}
  ad::Var total;        // sum of the four
};

/// Encoder NLL of o^i_{t+1} plus reconstruction of o^i_t (+) a^i_t from the
/// sampled prediction, averaged over batch and agents.
template <class T>
ad::Var loss_predictive(ad::Tape<T>& tape, const WorldModelLayout& layout, const WorldBatch<T>& batch,
                        const WorldNoise& noise);
/// NLL of the joint next observation under E_d plus reconstruction of
/// s_{t+1} (+) r_t by R_d from the E_d sample.
template <class T>
ad::Var loss_deductive(ad::Tape<T>& tape, const WorldModelLayout& layout, const WorldBatch<T>& batch,
                       const WorldNoise& noise);
/// Reconstruction of s_{t+1} (+) r_t by R_d from the E_p samples; the E_p
/// outputs are detached so only R_d receives this gradient.
template <class T>
ad::Var loss_deduce_reg(ad::Tape<T>& tape, const WorldModelLayout& layout, const WorldBatch<T>& batch,
                        const WorldNoise& noise);
/// R_d reconstruction from fixed per-agent observations (normalized).
template <class T>
ad::Var loss_deduce_reg_given(ad::Tape<T>& tape, const WorldModelLayout& layout, const WorldBatch<T>& batch,
                              const std::vector<ad::Matrix<T>>& obs_hat);
/// The reparameterized E_p draws used by loss_deduce_reg, as plain values.
template <class T>
std::vector<ad::Matrix<T>> sampled_predicted_obs(const ad::ParamStore<T>& params, const WorldModelLayout& layout,
                                                 const WorldBatch<T>& batch, const WorldNoise& noise);
/// NLL of s_{t+1} (+) r_t under each agent's auxiliary head, averaged over agents.
template <class T>
ad::Var loss_uncertainty_head(ad::Tape<T>& tape, const WorldModelLayout& layout,
                              const WorldBatch<T>& batch);
template <class T>
WorldLosses loss_world(ad::Tape<T>& tape, const WorldModelLayout& layout, const WorldBatch<T>& batch,
                       const WorldNoise& noise);

/// Inputs for one-step prediction; one row per sample.
struct ModelInput {
  std::vector<ad::Matrix<float>> obs;
  std::vector<ad::Matrix<float>> actions;
  ad::Matrix<float> state;
  Eigen::Index rows() const { return state.rows(); }
};

struct Prediction {
  ad::Matrix<float> next_state;            // s' from the deductive decoder
  ad::Matrix<float> reward;                // r' [B,1]
  ad::Matrix<float> aux_state;             // s-hat: per-agent heads fused by inverse variance
  Eigen::VectorXf uncertainty;             // u = ||s-hat - s'||
  std::vector<ad::Matrix<float>> next_obs; // o-hat per agent
};

/// Mean-mode inference. With `check_finite` the call throws NonFiniteError on
/// any non-finite intermediate; otherwise non-finite rows are returned as-is.
Prediction predict_next(const WorldModel& model, const ModelInput& input, bool check_finite = true);
ModelInput model_input(const TransitionBatch& batch);

struct WorldModelConfig {
  int hidden = 128;
  int steps = 2000;
  double learning_rate = 1e-3;
  int batch_size = 64;
  int validate_every = 100;
  double divergence_limit = 1e6;
  std::uint64_t seed = 0;
};

struct WorldLogRow {
  int step = 0;
  double predictive = 0.0;
  double deductive = 0.0;
  double deduce_reg = 0.0;
  double uncertainty = 0.0;
  std::optional<double> val_mse;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct WorldModelTrainResult {
  WorldModel model;
  std::vector<WorldLogRow> log;
  double clip_constant = 0.0;
};

/// One-step next-state MSE (mean over samples and state dimensions).
double one_step_state_mse(const WorldModel& model, const Dataset& data);

WorldModelTrainResult train_world_model(const Dataset& train, const Dataset& val,
                                        const WorldModelConfig& config);

void write_world_log_csv(const std::filesystem::path& path, const std::vector<WorldLogRow>& log);

}  // namespace logo
