#include "logo/synth.hpp"

#include "logo/stats.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace logo {

double compute_priority(double u, double clip_constant) {
  return std::clamp(clip_constant - u, 0.0, clip_constant);
}

double calibrate_clip_constant(std::span<const double> uncertainties) {
  if (uncertainties.empty()) throw std::invalid_argument("calibrating C needs at least one uncertainty value");
  const double c = stats::mean(uncertainties) + 2.0 * stats::stddev(uncertainties);
  return std::max(c, 1e-9);
}

Calibration calibrate_C(const WorldModel& model, const Dataset& val) {
  if (val.empty()) throw std::invalid_argument("calibrating C needs a non-empty validation split");
  Calibration out;
  const std::size_t chunk = 512;
  for (std::size_t begin = 0; begin < val.size(); begin += chunk) {
    std::vector<const Transition*> rows;
    for (std::size_t k = begin; k < std::min(val.size(), begin + chunk); ++k) rows.push_back(&val.transitions[k]);
    const Prediction p = predict_next(model, model_input(make_batch(rows)));
    for (Eigen::Index r = 0; r < p.uncertainty.size(); ++r) out.uncertainties.push_back(p.uncertainty[r]);
  }
  out.clip_constant = calibrate_clip_constant(out.uncertainties);
  return out;
}

std::vector<double> softmax_weights(std::span<const double> priorities) {
  if (priorities.empty()) return {};
  const double top = *std::max_element(priorities.begin(), priorities.end());
  std::vector<double> w(priorities.size());
  double total = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k) total += (w[k] = std::exp(priorities[k] - top));
  for (auto& x : w) x /= total;
  return w;
}

// ---------------------------------------------------------------- buffer

SyntheticBuffer::SyntheticBuffer(EnvSpec spec) : spec_(spec) {}

void SyntheticBuffer::replace(std::vector<Transition> items) {
  items_ = std::move(items);
  ++epoch_;
  rebuild();
}

void SyntheticBuffer::append(std::vector<Transition> items) {
  for (auto& t : items) items_.push_back(std::move(t));
  rebuild();
}

void SyntheticBuffer::clear() {
  items_.clear();
  rebuild();
}

void SyntheticBuffer::update(const std::function<void(Transition&)>& fn) {
  for (auto& t : items_) fn(t);
  rebuild();
}

void SyntheticBuffer::rebuild() {
  std::vector<double> p;
  p.reserve(items_.size());
  for (const auto& t : items_) {
    if (!t.priority) throw std::invalid_argument("synthetic transitions must carry a priority");
    if (!std::isfinite(*t.priority) || *t.priority < 0.0f)
      throw std::invalid_argument("synthetic priority must be finite and non-negative");
    p.push_back(*t.priority);
  }
  weights_ = softmax_weights(p);
  normalizer_ = 0.0;
  if (!p.empty()) {
    const double top = *std::max_element(p.begin(), p.end());
    for (double x : p) normalizer_ += std::exp(x - top);
  }
  dist_ = std::discrete_distribution<std::size_t>(weights_.begin(), weights_.end());
}

std::size_t SyntheticBuffer::sample_weighted(Rng& rng) const {
  if (items_.empty()) throw std::logic_error("sampling from an empty synthetic buffer");
  return dist_(rng.engine());
}

std::size_t SyntheticBuffer::sample_uniform(Rng& rng) const {
  if (items_.empty()) throw std::logic_error("sampling from an empty synthetic buffer");
  return rng.index(items_.size());
}

std::vector<double> sample_weights(const SyntheticBuffer& buffer) { return buffer.weights(); }

// ---------------------------------------------------------------- rollouts

void RolloutConfig::validate() const {
  if (horizon < 1) throw std::invalid_argument("rollout.horizon must be >= 1");
  if (starts_per_refresh < 1) throw std::invalid_argument("rollout.starts must be >= 1");
  if (!(clip_constant > 0.0)) throw std::invalid_argument("rollout.clip_constant must be > 0");
  if (!(action_noise >= 0.0)) throw std::invalid_argument("rollout.noise must be >= 0");
}

SyntheticBuffer generate_rollouts(const WorldModel& model, const BatchActor& actor, const Dataset& data,
                                  const RolloutConfig& config, std::uint64_t seed) {
  config.validate();
  if (data.empty()) throw std::invalid_argument("rollouts need a non-empty dataset");
  const EnvSpec& spec = model.spec();
  const int n = spec.n_agents;
  Rng rng(seed, "rollout");

  std::vector<std::size_t> starts(static_cast<std::size_t>(config.starts_per_refresh));
  for (auto& k : starts) k = rng.index(data.size());
  ModelInput input = model_input(make_batch(data, starts));
  const Eigen::Index rows = input.rows();

  std::vector<bool> alive(static_cast<std::size_t>(rows), true);
  std::vector<std::vector<Transition>> per_row(static_cast<std::size_t>(rows));
  for (int h = 0; h < config.horizon; ++h) {
    std::vector<ad::Matrix<float>> actions = actor(input.obs);
    for (auto& a : actions)
      for (Eigen::Index k = 0; k < a.size(); ++k)
        a.data()[k] = std::clamp(a.data()[k] + static_cast<float>(rng.normal(0.0, config.action_noise)), -1.0f, 1.0f);
    input.actions = actions;
    const Prediction p = predict_next(model, input, false);

    for (Eigen::Index r = 0; r < rows; ++r) {
      const auto row = static_cast<std::size_t>(r);
      if (!alive[row]) continue;
      bool finite = p.next_state.row(r).allFinite() && std::isfinite(p.reward(r, 0)) &&
                    std::isfinite(p.uncertainty[r]);
      for (int i = 0; i < n; ++i) finite = finite && p.next_obs[static_cast<std::size_t>(i)].row(r).allFinite();
      if (!finite) {
        alive[row] = false;
        continue;
      }
      Transition t;
      for (int i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(i);
        t.obs.push_back(input.obs[k].row(r).transpose());
        t.actions.push_back(input.actions[k].row(r).transpose());
        t.next_obs.push_back(p.next_obs[k].row(r).transpose());
      }
      t.state = input.state.row(r).transpose();
      t.next_state = p.next_state.row(r).transpose();
      t.reward = p.reward(r, 0);
      t.done = false;
      t.uncertainty = p.uncertainty[r];
      t.priority = static_cast<float>(compute_priority(p.uncertainty[r], config.clip_constant));
      t.episode = static_cast<int>(r);
      t.step = h;
      t.source = Provenance::Synthetic;
      per_row[row].push_back(std::move(t));
    }
    input.state = p.next_state;
    input.obs = p.next_obs;
  }

  std::vector<Transition> items;
  for (auto& v : per_row)
    for (auto& t : v) items.push_back(std::move(t));
  SyntheticBuffer buffer(spec);
  buffer.replace(std::move(items));
  return buffer;
}

// ---------------------------------------------------------------- minibatches

MixedBatch mixed_minibatch(const Dataset& data, const SyntheticBuffer& buffer, int batch_size, Rng& rng,
                           SynthSampling mode) {
  if (batch_size < 2 || batch_size % 2 != 0) throw std::invalid_argument("minibatch size must be even and >= 2");
  if (data.empty()) throw std::invalid_argument("minibatch needs a non-empty dataset");
  MixedBatch out;
  out.real_only = buffer.empty();
  const int real = out.real_only ? batch_size : batch_size / 2;
  std::vector<const Transition*> rows;
  for (int k = 0; k < real; ++k) {
    out.real_indices.push_back(rng.index(data.size()));
    rows.push_back(&data.transitions[out.real_indices.back()]);
  }
  if (!out.real_only) {
    for (int k = 0; k < batch_size / 2; ++k) {
      const std::size_t j = mode == SynthSampling::Weighted ? buffer.sample_weighted(rng) : buffer.sample_uniform(rng);
      out.synthetic_indices.push_back(j);
      rows.push_back(&buffer.transitions()[j]);
    }
  }
  out.batch = make_batch(rows);
  return out;
}

MixedBatch mixed_minibatch(const Dataset& data, const SyntheticBuffer& buffer, int batch_size,
                           std::uint64_t seed, SynthSampling mode) {
  Rng rng(seed, "minibatch");
  return mixed_minibatch(data, buffer, batch_size, rng, mode);
}

void apply_reward_penalty(SyntheticBuffer& buffer, double lambda_pen) {
  buffer.update([lambda_pen](Transition& t) {
    if (!t.uncertainty) throw std::invalid_argument("reward penalty needs the recorded uncertainty");
    t.reward = static_cast<float>(t.reward - lambda_pen * *t.uncertainty);
  });
}

Dataset buffer_to_dataset(const SyntheticBuffer& buffer) {
  Dataset ds;
  ds.spec = buffer.spec();
  ds.provenance = Provenance::Synthetic;
  ds.transitions = buffer.transitions();
  return ds;
}

}  // namespace logo
