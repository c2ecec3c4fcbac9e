#include "logo/envs.hpp"

#include "logo/rng.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace logo {

float EnvSpec::reward_bound() const {
  const float pairs = 0.5f * static_cast<float>(n_agents * (n_agents - 1));
  return 2.0f * std::sqrt(2.0f) + collision_penalty * pairs;
}

void EnvSpec::validate() const {
  if (n_agents < 1) throw std::invalid_argument("env.n_agents must be >= 1");
  if (episode_cap < 1) throw std::invalid_argument("env.episode_cap must be >= 1");
  if (!(gamma >= 0.0f && gamma < 1.0f)) throw std::invalid_argument("env.gamma must lie in [0, 1)");
  if (!(sensing_radius > 0.0f)) throw std::invalid_argument("env.sensing_radius must be positive");
  if (!(dt > 0.0f)) throw std::invalid_argument("env.dt must be positive");
}

std::vector<float> EnvSpec::encode() const {
  return {static_cast<float>(n_agents),
          static_cast<float>(episode_cap),
          gamma,
          sensing_radius,
          dt,
          max_speed,
          collision_distance,
          collision_penalty,
          static_cast<float>(action_kind == ActionKind::Continuous ? 0 : 1)};
}

EnvSpec EnvSpec::decode(std::span<const float> v) {
  if (v.size() != 9) throw std::invalid_argument("env spec record has wrong length");
  EnvSpec s;
  s.n_agents = static_cast<int>(v[0]);
  s.episode_cap = static_cast<int>(v[1]);
  s.gamma = v[2];
  s.sensing_radius = v[3];
  s.dt = v[4];
  s.max_speed = v[5];
  s.collision_distance = v[6];
  s.collision_penalty = v[7];
  s.action_kind = v[8] == 0.0f ? ActionKind::Continuous : ActionKind::Discrete;
  return s;
}

// ---------------------------------------------------------------- particle env

ParticleEnv::ParticleEnv(EnvSpec spec) : spec_(spec) { spec_.validate(); }

Eigen::Vector2f ParticleEnv::position(const Eigen::VectorXf& s, int agent) const {
  return s.segment<2>(2 * agent);
}

Eigen::Vector2f ParticleEnv::landmark(const Eigen::VectorXf& s, int agent) const {
  return s.segment<2>(4 * spec_.n_agents + 2 * agent);
}

std::pair<EnvState, JointObservation> ParticleEnv::reset(std::uint64_t seed) const {
  Rng rng(seed, "particle-reset");
  const int n = spec_.n_agents;
  EnvState st;
  st.seed = seed;
  st.s = Eigen::VectorXf::Zero(spec_.state_dim());
  for (int i = 0; i < 2 * n; ++i) st.s[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
  for (int i = 0; i < 2 * n; ++i) st.s[4 * n + i] = static_cast<float>(rng.uniform(-1.0, 1.0));
  return {st, observe_all(st.s)};
}

StepResult ParticleEnv::step(const EnvState& state, const JointAction& action) const {
  const int n = spec_.n_agents;
  if (static_cast<int>(action.size()) != n)
    throw std::invalid_argument("joint action has " + std::to_string(action.size()) +
                                " entries, expected " + std::to_string(n));
  if (state.step >= spec_.episode_cap) throw std::logic_error("step called on a finished episode");

  StepResult out;
  out.state = state;
  out.state.step = state.step + 1;
  Eigen::VectorXf& s = out.state.s;
  for (int i = 0; i < n; ++i) {
    if (action[static_cast<std::size_t>(i)].size() != spec_.action_dim())
      throw std::invalid_argument("action of agent " + std::to_string(i) + " has wrong size");
    Eigen::Vector2f a = action[static_cast<std::size_t>(i)].head<2>();
    if ((a.array().abs() > 1.0f).any() || !a.allFinite()) out.clipped = true;
    if (!a.allFinite()) a.setZero();
    a = a.cwiseMax(-1.0f).cwiseMin(1.0f);
    out.applied.push_back(a);
    const Eigen::Vector2f v = a * spec_.max_speed;
    Eigen::Vector2f p = s.segment<2>(2 * i) + spec_.dt * v;
    s.segment<2>(2 * i) = p.cwiseMax(-1.0f).cwiseMin(1.0f);
    s.segment<2>(2 * n + 2 * i) = v;
  }
  out.obs = observe_all(s);
  out.reward = reward(s);
  out.done = out.state.step >= spec_.episode_cap;
  return out;
}

Eigen::VectorXf ParticleEnv::observe(const Eigen::VectorXf& s, int agent) const {
  const int n = spec_.n_agents;
  if (agent < 0 || agent >= n)
    throw std::out_of_range("agent index " + std::to_string(agent) + " out of range");
  Eigen::VectorXf o = Eigen::VectorXf::Zero(spec_.obs_dim());
  const Eigen::Vector2f p = position(s, agent);
  o.segment<2>(0) = p;
  o.segment<2>(2) = s.segment<2>(2 * n + 2 * agent);
  o.segment<2>(4) = landmark(s, agent) - p;
  int slot = 0;
  for (int j = 0; j < n; ++j) {
    if (j == agent) continue;
    const Eigen::Vector2f rel = position(s, j) - p;
    if (rel.norm() <= spec_.sensing_radius) o.segment<2>(6 + 2 * slot) = rel;
    ++slot;
  }
  return o;
}

JointObservation ParticleEnv::observe_all(const Eigen::VectorXf& s) const {
  JointObservation out;
  for (int i = 0; i < spec_.n_agents; ++i) out.push_back(observe(s, i));
  return out;
}

double ParticleEnv::mean_landmark_distance(const Eigen::VectorXf& s) const {
  double total = 0.0;
  for (int i = 0; i < spec_.n_agents; ++i)
    total += static_cast<double>((landmark(s, i) - position(s, i)).norm());
  return total / spec_.n_agents;
}

float ParticleEnv::reward(const Eigen::VectorXf& s) const {
  const int n = spec_.n_agents;
  float dist = 0.0f;
  for (int i = 0; i < n; ++i) dist += (landmark(s, i) - position(s, i)).norm();
  dist /= static_cast<float>(n);
  float penalty = 0.0f;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if ((position(s, i) - position(s, j)).norm() < spec_.collision_distance)
        penalty += spec_.collision_penalty;
  return -dist - penalty;
}

Eigen::VectorXf ParticleEnv::state_from_observations(const JointObservation& obs) const {
  const int n = spec_.n_agents;
  if (static_cast<int>(obs.size()) != n) throw std::invalid_argument("joint observation size");
  Eigen::VectorXf s(spec_.state_dim());
  for (int i = 0; i < n; ++i) {
    const auto& o = obs[static_cast<std::size_t>(i)];
    s.segment<2>(2 * i) = o.segment<2>(0);
    s.segment<2>(2 * n + 2 * i) = o.segment<2>(2);
    s.segment<2>(4 * n + 2 * i) = o.segment<2>(4) + o.segment<2>(0);
  }
  return s;
}

// ---------------------------------------------------------------- tabular

void TabularMDP::validate() const {
  if (num_states < 1 || num_states > 64) throw std::invalid_argument("tabular MDP needs 1..64 states");
  if (num_actions < 1 || num_actions > 16)
    throw std::invalid_argument("tabular MDP needs 1..16 joint actions");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must lie in [0, 1)");
  const auto rows = static_cast<std::size_t>(num_states * num_actions);
  if (transition.size() != rows * static_cast<std::size_t>(num_states) || reward.size() != rows)
    throw std::invalid_argument("tabular MDP table sizes do not match state/action counts");
  for (std::size_t row = 0; row < rows; ++row) {
    double total = 0.0;
    for (int k = 0; k < num_states; ++k) {
      const double p = transition[row * static_cast<std::size_t>(num_states) + static_cast<std::size_t>(k)];
      if (p < 0.0) throw std::invalid_argument("negative transition probability");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9)
      throw std::invalid_argument("transition row " + std::to_string(row) + " sums to " +
                                  std::to_string(total));
    if (!std::isfinite(reward[row])) throw std::invalid_argument("non-finite reward");
  }
}

TabularMDP TabularMDP::random(int states, int actions, double gamma, std::uint64_t seed) {
  Rng rng(seed, "tabular-mdp");
  TabularMDP m;
  m.num_states = states;
  m.num_actions = actions;
  m.gamma = gamma;
  m.transition.resize(static_cast<std::size_t>(states * actions * states));
  m.reward.resize(static_cast<std::size_t>(states * actions));
  for (int row = 0; row < states * actions; ++row) {
    double total = 0.0;
    for (int k = 0; k < states; ++k) {
      const double w = -std::log(1.0 - rng.uniform());
      m.transition[static_cast<std::size_t>(row * states + k)] = w;
      total += w;
    }
    for (int k = 0; k < states; ++k) m.transition[static_cast<std::size_t>(row * states + k)] /= total;
    m.reward[static_cast<std::size_t>(row)] = rng.uniform(-1.0, 1.0);
  }
  m.validate();
  return m;
}

TabularMDP TabularMDP::chain(int states, double gamma) {
  TabularMDP m;
  m.num_states = states;
  m.num_actions = 2;
  m.gamma = gamma;
  m.transition.assign(static_cast<std::size_t>(states * 2 * states), 0.0);
  m.reward.assign(static_cast<std::size_t>(states * 2), 0.0);
  for (int s = 0; s < states; ++s) {
    const int left = std::max(0, s - 1);
    const int right = std::min(states - 1, s + 1);
    m.transition[static_cast<std::size_t>((s * 2 + 0) * states + left)] = 1.0;
    m.transition[static_cast<std::size_t>((s * 2 + 1) * states + right)] = 1.0;
    if (right == states - 1) m.reward[static_cast<std::size_t>(s * 2 + 1)] = 1.0;
    if (left == states - 1) m.reward[static_cast<std::size_t>(s * 2 + 0)] = 1.0;
  }
  m.validate();
  return m;
}

std::vector<TabularEntry> tabular_enumerate(const TabularMDP& mdp) {
  mdp.validate();
  std::vector<TabularEntry> out;
  out.reserve(static_cast<std::size_t>(mdp.num_states * mdp.num_actions));
  for (int s = 0; s < mdp.num_states; ++s) {
    for (int a = 0; a < mdp.num_actions; ++a) {
      TabularEntry e;
      e.state = s;
      e.action = a;
      e.reward = mdp.r(s, a);
      e.next_distribution.resize(static_cast<std::size_t>(mdp.num_states));
      for (int k = 0; k < mdp.num_states; ++k) e.next_distribution[static_cast<std::size_t>(k)] = mdp.p(s, a, k);
      out.push_back(std::move(e));
    }
  }
  return out;
}

}  // namespace logo
