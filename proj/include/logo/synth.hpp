#pragma once

#include "logo/dataset.hpp"
#include "logo/rng.hpp"
#include "logo/world_model.hpp"

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

namespace logo {

/// P_u = clip(C - u, [0, C]).
double compute_priority(double u, double clip_constant);

/// mean(u) + 2 * std(u) (population std), floored at a tiny positive value.
double calibrate_clip_constant(std::span<const double> uncertainties);

struct Calibration {
  double clip_constant = 0.0;
  std::vector<double> uncertainties;  // u per validation transition, in order
};
Calibration calibrate_C(const WorldModel& model, const Dataset& val);

/// exp(p_k) / sum_j exp(p_j), evaluated with max-subtraction.
std::vector<double> softmax_weights(std::span<const double> priorities);

/// World-model transitions tagged with a priority. Sampling weights are the
/// softmax of the priorities over the whole buffer and are rebuilt on every
/// mutation.
class SyntheticBuffer {
 public:
  explicit SyntheticBuffer(EnvSpec spec = {});

  const EnvSpec& spec() const { return spec_; }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  const std::vector<Transition>& transitions() const { return items_; }
  const std::vector<double>& weights() const { return weights_; }
  /// Sum of exp(P_u - max P_u) over the buffer.
  double normalizer() const { return normalizer_; }
  int epoch() const { return epoch_; }

  /// Replaces the contents and advances the refresh epoch.
  void replace(std::vector<Transition> items);
  void append(std::vector<Transition> items);
  void clear();
  /// Applies `fn` to every transition, then rebuilds the weights.
  void update(const std::function<void(Transition&)>& fn);

  std::size_t sample_weighted(Rng& rng) const;
  std::size_t sample_uniform(Rng& rng) const;

 private:
  void rebuild();

  EnvSpec spec_;
  std::vector<Transition> items_;
  std::vector<double> weights_;
  double normalizer_ = 0.0;
  int epoch_ = 0;
  mutable std::discrete_distribution<std::size_t> dist_;
};

std::vector<double> sample_weights(const SyntheticBuffer& buffer);

struct RolloutConfig {
  int horizon = 15;
  int starts_per_refresh = 200;
  double action_noise = 0.1;
  double clip_constant = 1.0;

  void validate() const;
};

/// Per-agent action means for a batch of raw observations (one matrix per agent).
using BatchActor = std::function<std::vector<ad::Matrix<float>>(const std::vector<ad::Matrix<float>>&)>;

/// Starts from states drawn uniformly from `data` and chains predict_next on
/// its own outputs for `horizon` steps. Actions are the actor's means plus
/// Gaussian noise, clipped to [-1, 1]. A rollout stops at the first step
/// whose prediction is non-finite.
SyntheticBuffer generate_rollouts(const WorldModel& model, const BatchActor& actor, const Dataset& data,
                                  const RolloutConfig& config, std::uint64_t seed);

enum class SynthSampling { Weighted, Uniform };

struct MixedBatch {
  TransitionBatch batch;
  std::vector<std::size_t> real_indices;
  std::vector<std::size_t> synthetic_indices;
  /// Set when the buffer was empty and the whole batch came from `data`.
  bool real_only = false;
};

/// B/2 transitions uniformly from `data`, B/2 from the buffer with
/// replacement (weighted by softmax priorities or uniformly).
MixedBatch mixed_minibatch(const Dataset& data, const SyntheticBuffer& buffer, int batch_size, Rng& rng,
                           SynthSampling mode = SynthSampling::Weighted);
MixedBatch mixed_minibatch(const Dataset& data, const SyntheticBuffer& buffer, int batch_size,
                           std::uint64_t seed, SynthSampling mode = SynthSampling::Weighted);

/// r <- r - lambda_pen * u for every synthetic transition.
void apply_reward_penalty(SyntheticBuffer& buffer, double lambda_pen);

Dataset buffer_to_dataset(const SyntheticBuffer& buffer);

}  // namespace logo
