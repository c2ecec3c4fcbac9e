#include "logo/dataset.hpp"

#include "logo/rng.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

namespace logo {

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::Random: return "random";
    case Provenance::Medium: return "medium";
    case Provenance::Expert: return "expert";
    case Provenance::Mixed: return "mixed";
    case Provenance::Synthetic: return "synthetic";
    case Provenance::MediumReplay: return "medium-replay";
  }
  return "unknown";
}

Provenance provenance_from_string(const std::string& name) {
  for (int k = 0; k <= 5; ++k) {
    const auto p = static_cast<Provenance>(k);
    if (to_string(p) == name) return p;
  }
  throw std::invalid_argument("unknown dataset tier '" + name + "'");
}

std::vector<int> Dataset::episode_ids() const {
  std::vector<int> ids;
  std::set<int> seen;
  for (const auto& t : transitions)
    if (seen.insert(t.episode).second) ids.push_back(t.episode);
  return ids;
}

std::vector<double> Dataset::episode_returns() const {
  std::map<int, double> sums;
  for (const auto& t : transitions) sums[t.episode] += t.reward;
  std::vector<double> out;
  for (int id : episode_ids()) out.push_back(sums[id]);
  return out;
}

JointAction expert_action(const ParticleEnv& env, const Eigen::VectorXf& s, float gain) {
  JointAction a;
  for (int i = 0; i < env.spec().n_agents; ++i) {
    Eigen::Vector2f d = (env.landmark(s, i) - env.position(s, i)) * gain;
    a.push_back(d.cwiseMax(-1.0f).cwiseMin(1.0f));
  }
  return a;
}

namespace {

JointAction behavior_action(const ParticleEnv& env, const Eigen::VectorXf& s, Provenance tier,
                            const BehaviorSpec& b, Rng& rng) {
  const int n = env.spec().n_agents;
  if (tier == Provenance::Random) {
    JointAction a;
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXf v(2);
      v[0] = static_cast<float>(rng.uniform(-1.0, 1.0));
      v[1] = static_cast<float>(rng.uniform(-1.0, 1.0));
      a.push_back(v);
    }
    return a;
  }
  const double sigma = tier == Provenance::Expert ? b.expert_noise : b.medium_noise;
  JointAction a = expert_action(env, s, b.gain);
  for (auto& v : a) {
    for (Eigen::Index k = 0; k < v.size(); ++k)
      v[k] = std::clamp(v[k] + static_cast<float>(rng.normal(0.0, sigma)), -1.0f, 1.0f);
  }
  return a;
}

Provenance episode_tier(const BehaviorSpec& b, int episode, int episodes, Rng& rng) {
  switch (b.tier) {
    case Provenance::Mixed:
      return episode < episodes / 2 ? Provenance::Medium : Provenance::Expert;
    case Provenance::MediumReplay:
      return rng.uniform() < b.replay_random_share ? Provenance::Random : Provenance::Medium;
    case Provenance::Synthetic:
      throw std::invalid_argument("synthetic data cannot be collected from the environment");
    default:
      return b.tier;
  }
}

}  // namespace

Dataset collect(const EnvSpec& spec, const BehaviorSpec& behavior, int episodes, std::uint64_t seed) {
  if (episodes < 1) throw std::invalid_argument("collect needs at least one episode");
  ParticleEnv env(spec);
  Dataset ds;
  ds.spec = spec;
  ds.provenance = behavior.tier;
  ds.transitions.reserve(static_cast<std::size_t>(episodes * spec.episode_cap));
  for (int e = 0; e < episodes; ++e) {
    Rng rng(seed, "collect-episode", static_cast<std::uint64_t>(e));
    const Provenance tier = episode_tier(behavior, e, episodes, rng);
    auto [state, obs] = env.reset(derive_seed(seed, "collect-reset", static_cast<std::uint64_t>(e)));
    bool done = false;
    while (!done) {
      JointAction a = behavior_action(env, state.s, tier, behavior, rng);
      StepResult r = env.step(state, a);
      Transition t;
      t.obs = obs;
      t.state = state.s;
      t.actions = r.applied;
      t.next_state = r.state.s;
      t.next_obs = r.obs;
      t.reward = r.reward;
      t.done = r.done;
      t.episode = e;
      t.step = state.step;
      t.source = tier;
      ds.transitions.push_back(std::move(t));
      done = r.done;
      state = r.state;
      obs = r.obs;
    }
  }
  return ds;
}

// ---------------------------------------------------------------- persistence

namespace {

Tensor column(std::string name, std::vector<std::uint32_t> shape, std::vector<float> data) {
  return Tensor{std::move(name), std::move(shape), std::move(data)};
}

void append_joint(std::vector<float>& out, const JointObservation& v) {
  for (const auto& x : v) out.insert(out.end(), x.data(), x.data() + x.size());
}

JointObservation read_joint(const Tensor& t, std::size_t row) {
  const std::size_t n = t.shape[1];
  const std::size_t d = t.shape[2];
  JointObservation out;
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::VectorXf v(static_cast<Eigen::Index>(d));
    std::copy_n(t.data.begin() + static_cast<std::ptrdiff_t>((row * n + i) * d), d, v.data());
    out.push_back(std::move(v));
  }
  return out;
}

Eigen::VectorXf read_row(const Tensor& t, std::size_t row) {
  const std::size_t d = t.shape[1];
  Eigen::VectorXf v(static_cast<Eigen::Index>(d));
  std::copy_n(t.data.begin() + static_cast<std::ptrdiff_t>(row * d), d, v.data());
  return v;
}

void expect_rows(const Tensor& t, std::size_t rows, std::size_t rank) {
  if (t.shape.size() != rank || t.shape[0] != rows)
    throw BadFormatError("bad format: column '" + t.name + "' has inconsistent shape");
}

}  // namespace

Container dataset_to_container(const Dataset& ds) {
  const auto N = static_cast<std::uint32_t>(ds.size());
  const auto n = static_cast<std::uint32_t>(ds.spec.n_agents);
  const auto od = static_cast<std::uint32_t>(ds.spec.obs_dim());
  const auto sd = static_cast<std::uint32_t>(ds.spec.state_dim());
  const auto ad = static_cast<std::uint32_t>(ds.spec.action_dim());

  std::vector<float> obs, state, actions, next_state, next_obs, reward, done, episode, step, source;
  std::vector<float> priority, priority_mask, uncertainty, uncertainty_mask;
  bool any_priority = false, any_uncertainty = false;
  for (const auto& t : ds.transitions) {
    if (static_cast<std::uint32_t>(t.obs.size()) != n || t.state.size() != static_cast<Eigen::Index>(sd))
      throw std::invalid_argument("transition does not match the dataset env spec");
    append_joint(obs, t.obs);
    state.insert(state.end(), t.state.data(), t.state.data() + t.state.size());
    append_joint(actions, t.actions);
    next_state.insert(next_state.end(), t.next_state.data(), t.next_state.data() + t.next_state.size());
    append_joint(next_obs, t.next_obs);
    reward.push_back(t.reward);
    done.push_back(t.done ? 1.0f : 0.0f);
    episode.push_back(static_cast<float>(t.episode));
    step.push_back(static_cast<float>(t.step));
    source.push_back(static_cast<float>(static_cast<int>(t.source)));
    priority.push_back(t.priority.value_or(0.0f));
    priority_mask.push_back(t.priority ? 1.0f : 0.0f);
    uncertainty.push_back(t.uncertainty.value_or(0.0f));
    uncertainty_mask.push_back(t.uncertainty ? 1.0f : 0.0f);
    any_priority = any_priority || t.priority.has_value();
    any_uncertainty = any_uncertainty || t.uncertainty.has_value();
  }

  Container c;
  c.tag = "DATA";
  c.tensors.push_back(column("meta.spec", {9}, ds.spec.encode()));
  c.tensors.push_back(column("meta.provenance", {1}, {static_cast<float>(static_cast<int>(ds.provenance))}));
  c.tensors.push_back(column("obs", {N, n, od}, std::move(obs)));
  c.tensors.push_back(column("state", {N, sd}, std::move(state)));
  c.tensors.push_back(column("actions", {N, n, ad}, std::move(actions)));
  c.tensors.push_back(column("next_state", {N, sd}, std::move(next_state)));
  c.tensors.push_back(column("next_obs", {N, n, od}, std::move(next_obs)));
  c.tensors.push_back(column("reward", {N}, std::move(reward)));
  c.tensors.push_back(column("done", {N}, std::move(done)));
  c.tensors.push_back(column("episode", {N}, std::move(episode)));
  c.tensors.push_back(column("step", {N}, std::move(step)));
  c.tensors.push_back(column("source", {N}, std::move(source)));
  if (any_priority) {
    c.tensors.push_back(column("priority", {N}, std::move(priority)));
    c.tensors.push_back(column("priority_mask", {N}, std::move(priority_mask)));
  }
  if (any_uncertainty) {
    c.tensors.push_back(column("uncertainty", {N}, std::move(uncertainty)));
    c.tensors.push_back(column("uncertainty_mask", {N}, std::move(uncertainty_mask)));
  }
  return c;
}

Dataset dataset_from_container(const Container& c) {
  if (c.tag != "DATA") throw BadFormatError("bad format: expected section 'DATA', found '" + c.tag + "'");
  Dataset ds;
  ds.spec = EnvSpec::decode(c.get("meta.spec").data);
  const auto& prov = c.get("meta.provenance");
  if (prov.data.size() != 1) throw BadFormatError("bad format: provenance record");
  ds.provenance = static_cast<Provenance>(static_cast<int>(prov.data[0]));

  const auto& obs = c.get("obs");
  if (obs.shape.size() != 3) throw BadFormatError("bad format: obs column rank");
  const std::size_t N = obs.shape[0];
  const auto& state = c.get("state");
  const auto& actions = c.get("actions");
  const auto& next_state = c.get("next_state");
  const auto& next_obs = c.get("next_obs");
  const auto& reward = c.get("reward");
  const auto& done = c.get("done");
  const auto& episode = c.get("episode");
  const auto& step = c.get("step");
  const auto& source = c.get("source");
  expect_rows(state, N, 2);
  expect_rows(actions, N, 3);
  expect_rows(next_state, N, 2);
  expect_rows(next_obs, N, 3);
  for (const Tensor* t : {&reward, &done, &episode, &step, &source}) expect_rows(*t, N, 1);
  const Tensor* priority = c.find("priority");
  const Tensor* priority_mask = c.find("priority_mask");
  const Tensor* uncertainty = c.find("uncertainty");
  const Tensor* uncertainty_mask = c.find("uncertainty_mask");

  ds.transitions.reserve(N);
  for (std::size_t k = 0; k < N; ++k) {
    Transition t;
    t.obs = read_joint(obs, k);
    t.state = read_row(state, k);
    t.actions = read_joint(actions, k);
    t.next_state = read_row(next_state, k);
    t.next_obs = read_joint(next_obs, k);
    t.reward = reward.data[k];
    t.done = done.data[k] != 0.0f;
    t.episode = static_cast<int>(episode.data[k]);
    t.step = static_cast<int>(step.data[k]);
    t.source = static_cast<Provenance>(static_cast<int>(source.data[k]));
    if (priority && priority_mask && priority_mask->data.at(k) != 0.0f) t.priority = priority->data.at(k);
    if (uncertainty && uncertainty_mask && uncertainty_mask->data.at(k) != 0.0f)
      t.uncertainty = uncertainty->data.at(k);
    ds.transitions.push_back(std::move(t));
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  write_container(path, dataset_to_container(ds));
}

Dataset load_dataset(const std::filesystem::path& path) {
  return dataset_from_container(read_container(path, "DATA"));
}

Dataset load_dataset_for_training(const std::filesystem::path& path, const EnvSpec& expected) {
  Dataset ds = load_dataset(path);
  if (!(ds.spec == expected))
    throw EnvMismatchError("env mismatch: dataset '" + path.string() +
                           "' was collected under a different environment spec");
  return ds;
}

std::pair<Dataset, Dataset> split(const Dataset& ds, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 0.5))
    throw std::invalid_argument("val_fraction must lie in (0, 0.5)");
  std::vector<int> ids = ds.episode_ids();
  Rng rng(seed, "split");
  std::shuffle(ids.begin(), ids.end(), rng.engine());
  const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(ids.size())));
  std::set<int> val_ids(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_val));
  Dataset train, val;
  train.spec = val.spec = ds.spec;
  train.provenance = val.provenance = ds.provenance;
  for (const auto& t : ds.transitions) (val_ids.count(t.episode) ? val : train).transitions.push_back(t);
  return {std::move(train), std::move(val)};
}

// ---------------------------------------------------------------- batches

ad::Matrix<float> TransitionBatch::joint_actions() const {
  ad::Matrix<float> out(rows(), 0);
  Eigen::Index cols = 0;
  for (const auto& a : actions) cols += a.cols();
  out.resize(rows(), cols);
  Eigen::Index at = 0;
  for (const auto& a : actions) {
    out.middleCols(at, a.cols()) = a;
    at += a.cols();
  }
  return out;
}

TransitionBatch make_batch(std::span<const Transition* const> rows) {
  if (rows.empty()) throw std::invalid_argument("cannot build an empty batch");
  const auto B = static_cast<Eigen::Index>(rows.size());
  const Transition& first = *rows[0];
  const std::size_t n = first.obs.size();
  TransitionBatch b;
  b.obs.assign(n, ad::Matrix<float>(B, first.obs[0].size()));
  b.next_obs.assign(n, ad::Matrix<float>(B, first.obs[0].size()));
  b.actions.assign(n, ad::Matrix<float>(B, first.actions[0].size()));
  b.state.resize(B, first.state.size());
  b.next_state.resize(B, first.next_state.size());
  b.reward.resize(B, 1);
  b.done.resize(B, 1);
  for (Eigen::Index r = 0; r < B; ++r) {
    const Transition& t = *rows[static_cast<std::size_t>(r)];
    for (std::size_t i = 0; i < n; ++i) {
      b.obs[i].row(r) = t.obs[i].transpose();
      b.next_obs[i].row(r) = t.next_obs[i].transpose();
      b.actions[i].row(r) = t.actions[i].transpose();
    }
    b.state.row(r) = t.state.transpose();
    b.next_state.row(r) = t.next_state.transpose();
    b.reward(r, 0) = t.reward;
    b.done(r, 0) = t.done ? 1.0f : 0.0f;
  }
  return b;
}

TransitionBatch make_batch(const Dataset& ds, std::span<const std::size_t> indices) {
  std::vector<const Transition*> rows;
  rows.reserve(indices.size());
  for (auto k : indices) rows.push_back(&ds.transitions.at(k));
  return make_batch(rows);
}

TransitionBatch make_batch(const Dataset& ds) {
  std::vector<const Transition*> rows;
  rows.reserve(ds.size());
  for (const auto& t : ds.transitions) rows.push_back(&t);
  return make_batch(rows);
}

}  // namespace logo
