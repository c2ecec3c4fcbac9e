#include "logo/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

namespace logo {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(v);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

long long to_int(const std::string& key, const std::string& v) {
  long long x = 0;
  const auto t = trim(v);
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), x);
  if (ec != std::errc() || p != t.data() + t.size() || t.empty()) throw ConfigError(key, "expected an integer, got '" + v + "'");
  return x;
}

double to_real(const std::string& key, const std::string& v) {
  const auto t = trim(v);
  char* end = nullptr;
  const double x = std::strtod(t.c_str(), &end);
  if (t.empty() || end != t.c_str() + t.size() || !std::isfinite(x))
    throw ConfigError(key, "expected a real number, got '" + v + "'");
  return x;
}

bool to_bool(const std::string& key, const std::string& v) {
  const auto t = trim(v);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ConfigError(key, "expected true or false, got '" + v + "'");
}

Provenance to_tier(const std::string& key, const std::string& v) {
  try {
    return provenance_from_string(trim(v));
  } catch (const std::invalid_argument&) {
    throw ConfigError(key, "unknown dataset tier '" + v + "'");
  }
}

template <class T>
std::string shortest(T v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string from_bool(bool b) { return b ? "true" : "false"; }

template <class T>
std::string join(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    if (k) out += ",";
    if constexpr (std::is_same_v<T, Provenance>)
      out += to_string(xs[k]);
    else
      out += std::to_string(xs[k]);
  }
  return out;
}

struct Field {
  ConfigKey info;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define INT_FIELD(KEY, MEMBER, DOC)                                                                       \
  Field {                                                                                                 \
    {KEY, DOC}, [](ExperimentConfig& c, const std::string& v) { c.MEMBER = static_cast<decltype(c.MEMBER)>(to_int(KEY, v)); }, \
        [](const ExperimentConfig& c) { return std::to_string(c.MEMBER); }                                \
  }
#define REAL_FIELD(KEY, MEMBER, DOC)                                                                      \
  Field {                                                                                                 \
    {KEY, DOC}, [](ExperimentConfig& c, const std::string& v) { c.MEMBER = static_cast<decltype(c.MEMBER)>(to_real(KEY, v)); }, \
        [](const ExperimentConfig& c) { return shortest(c.MEMBER); }                                      \
  }
#define BOOL_FIELD(KEY, MEMBER, DOC)                                                                      \
  Field {                                                                                                 \
    {KEY, DOC}, [](ExperimentConfig& c, const std::string& v) { c.MEMBER = to_bool(KEY, v); },            \
        [](const ExperimentConfig& c) { return from_bool(c.MEMBER); }                                     \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      INT_FIELD("env.n_agents", env.n_agents, "number of agents (default 2)"),
      INT_FIELD("env.episode_cap", env.episode_cap, "steps per episode (default 25)"),
      REAL_FIELD("env.gamma", env.gamma, "discount (default 0.99)"),
      REAL_FIELD("env.sensing_radius", env.sensing_radius, "neighbour visibility radius (default 1)"),
      REAL_FIELD("env.dt", env.dt, "integration step (default 0.1)"),
      REAL_FIELD("env.max_speed", env.max_speed, "speed at full action (default 1)"),
      REAL_FIELD("env.collision_distance", env.collision_distance, "pair distance counted as a collision (default 0.1)"),
      REAL_FIELD("env.collision_penalty", env.collision_penalty, "penalty per colliding pair (default 0.25)"),
      Field{{"data.tier", "random | medium | expert | mixed | medium-replay (default medium)"},
            [](ExperimentConfig& c, const std::string& v) { c.tier = to_tier("data.tier", v); },
            [](const ExperimentConfig& c) { return to_string(c.tier); }},
      INT_FIELD("data.episodes", episodes, "episodes collected (default 200)"),
      REAL_FIELD("data.val_fraction", val_fraction, "share of episodes held out (default 0.2)"),
      INT_FIELD("wm.hidden", wm.hidden, "hidden width of every world-model network (default 128)"),
      INT_FIELD("wm.steps", wm.steps, "Adam steps (default 2000)"),
      REAL_FIELD("wm.lr", wm.learning_rate, "learning rate (default 1e-3)"),
      INT_FIELD("wm.batch", wm.batch_size, "minibatch size (default 64)"),
      INT_FIELD("wm.validate_every", wm.validate_every, "validation cadence in steps (default 100)"),
      REAL_FIELD("wm.divergence", wm.divergence_limit, "loss above which training aborts (default 1e6)"),
      INT_FIELD("rollout.horizon", rollout.horizon, "rollout length H (default 15)"),
      INT_FIELD("rollout.starts", rollout.starts_per_refresh, "start states per refresh (default 200)"),
      REAL_FIELD("rollout.noise", rollout.action_noise, "Gaussian action noise (default 0.1)"),
      REAL_FIELD("rollout.clip_constant", rollout.clip_constant, "priority clip C; 0 uses the calibrated value (default 0)"),
      INT_FIELD("policy.hidden", policy.hidden, "hidden width of critic and actors (default 128)"),
      INT_FIELD("policy.steps", policy.steps, "training steps (default 5000)"),
      INT_FIELD("policy.batch", policy.batch_size, "minibatch size, even (default 128)"),
      REAL_FIELD("policy.lr", policy.learning_rate, "learning rate (default 3e-4)"),
      REAL_FIELD("policy.alpha", policy.hyper.alpha, "CQL weight (default 1)"),
      REAL_FIELD("policy.bc_lambda", policy.hyper.bc_lambda, "BC weight is mean|Q| / bc_lambda (default 2.5)"),
      REAL_FIELD("policy.tau", policy.hyper.tau, "Polyak rate (default 0.005)"),
      INT_FIELD("policy.refresh_every", policy.refresh_every, "synthetic buffer refresh cadence (default 1000)"),
      INT_FIELD("policy.eval_every", policy.eval_every, "periodic evaluation cadence, 0 off (default 0)"),
      INT_FIELD("policy.eval_episodes", policy.eval_episodes, "episodes per periodic evaluation (default 5)"),
      INT_FIELD("policy.mpc_candidates", policy.mpc_candidates, "MPC candidates k (default 3)"),
      REAL_FIELD("policy.mpc_noise", policy.mpc_noise, "MPC candidate noise (default 0.2)"),
      INT_FIELD("eval.episodes", eval_episodes, "final evaluation episodes (default 20)"),
      BOOL_FIELD("ablation.disable_buffer", ablation.disable_buffer, "train the policy on real data only (default false)"),
      BOOL_FIELD("ablation.reward_penalty", ablation.reward_penalty, "penalise synthetic rewards instead of weighting (default false)"),
      REAL_FIELD("ablation.lambda_pen", ablation.lambda_pen, "reward penalty weight (default 1)"),
      BOOL_FIELD("ablation.direct_state", ablation.direct_state, "train the direct-state baseline in ablate (default true)"),
      INT_FIELD("ablation.ensemble_k", ablation.ensemble_k, "ensemble members for timing, 0 off (default 5)"),
      INT_FIELD("ablation.ensemble_steps", ablation.ensemble_steps, "training steps per ensemble member (default 300)"),
      BOOL_FIELD("ablation.mpc", ablation.mpc, "MPC-enhanced policy training in train-policy (default false)"),
      Field{{"ablation.horizons", "rollout horizons swept by ablate (default 5,10,15,20)"},
            [](ExperimentConfig& c, const std::string& v) {
              c.ablation.horizons.clear();
              for (const auto& x : split_list(v)) c.ablation.horizons.push_back(static_cast<int>(to_int("ablation.horizons", x)));
            },
            [](const ExperimentConfig& c) { return join(c.ablation.horizons); }},
      Field{{"ablation.mpc_tiers", "dataset tiers for the MPC comparison (default medium-replay,medium,expert,mixed)"},
            [](ExperimentConfig& c, const std::string& v) {
              c.ablation.mpc_tiers.clear();
              for (const auto& x : split_list(v)) c.ablation.mpc_tiers.push_back(to_tier("ablation.mpc_tiers", x));
            },
            [](const ExperimentConfig& c) { return join(c.ablation.mpc_tiers); }},
      INT_FIELD("ablation.timing_trajectories", ablation.timing_trajectories, "timed rollouts (default 500)"),
      INT_FIELD("ablation.timing_steps", ablation.timing_steps, "steps per timed rollout (default 10)"),
      INT_FIELD("ablation.timing_repetitions", ablation.timing_repetitions, "timing repetitions, median taken (default 5)"),
      INT_FIELD("ablation.pca_points", ablation.pca_points, "held-out transitions in the PCA export (default 100)"),
      Field{{"run.seeds", "comma-separated seeds (default 0,1,2,3,4)"},
            [](ExperimentConfig& c, const std::string& v) {
              c.seeds.clear();
              for (const auto& x : split_list(v)) {
                const long long s = to_int("run.seeds", x);
                if (s < 0) throw ConfigError("run.seeds", "seeds must be non-negative");
                c.seeds.push_back(static_cast<std::uint64_t>(s));
              }
            },
            [](const ExperimentConfig& c) { return join(c.seeds); }},
      Field{{"run.experiment", "experiment name (default default)"},
            [](ExperimentConfig& c, const std::string& v) { c.experiment = trim(v); },
            [](const ExperimentConfig& c) { return c.experiment; }},
      Field{{"run.out", "output root; empty uses $LOGO_OUT, then ./runs"},
            [](ExperimentConfig& c, const std::string& v) { c.out = trim(v); },
            [](const ExperimentConfig& c) { return c.out; }},
  };
  return table;
}

#undef INT_FIELD
#undef REAL_FIELD
#undef BOOL_FIELD

const Field& find_field(const std::string& key) {
  for (const auto& f : fields())
    if (f.info.key == key) return f;
  throw ConfigError(key, "unknown configuration key");
}

}  // namespace

ExperimentConfig::ExperimentConfig() { rollout.clip_constant = 0.0; }

void ExperimentConfig::set(const std::string& key, const std::string& value) { find_field(key).set(*this, value); }

std::string ExperimentConfig::get(const std::string& key) const { return find_field(key).get(*this); }

const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    for (const auto& f : fields()) out.push_back(f.info);
    return out;
  }();
  return keys;
}

void ExperimentConfig::validate() const {
  try {
    env.validate();
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    throw ConfigError(msg.substr(0, msg.find(' ')), msg);
  }
  auto require = [](bool ok, const char* key, const char* msg) {
    if (!ok) throw ConfigError(key, msg);
  };
  require(episodes >= 2, "data.episodes", "must be >= 2");
  require(val_fraction > 0.0 && val_fraction < 0.5, "data.val_fraction", "must lie in (0, 0.5)");
  require(wm.hidden >= 1, "wm.hidden", "must be >= 1");
  require(wm.steps >= 0, "wm.steps", "must be >= 0");
  require(wm.learning_rate > 0.0, "wm.lr", "must be > 0");
  require(wm.batch_size >= 1, "wm.batch", "must be >= 1");
  require(wm.validate_every >= 0, "wm.validate_every", "must be >= 0");
  require(wm.divergence_limit > 0.0, "wm.divergence", "must be > 0");
  require(rollout.horizon >= 1, "rollout.horizon", "must be >= 1");
  require(rollout.starts_per_refresh >= 1, "rollout.starts", "must be >= 1");
  require(rollout.action_noise >= 0.0, "rollout.noise", "must be >= 0");
  require(rollout.clip_constant >= 0.0, "rollout.clip_constant", "must be >= 0");
  require(policy.hidden >= 1, "policy.hidden", "must be >= 1");
  require(policy.steps >= 0, "policy.steps", "must be >= 0");
  require(policy.batch_size >= 2 && policy.batch_size % 2 == 0, "policy.batch", "must be even and >= 2");
  require(policy.learning_rate > 0.0, "policy.lr", "must be > 0");
  require(policy.hyper.alpha >= 0.0, "policy.alpha", "must be >= 0");
  require(policy.hyper.bc_lambda >= 0.0, "policy.bc_lambda", "must be >= 0");
  require(policy.hyper.tau > 0.0 && policy.hyper.tau <= 1.0, "policy.tau", "must lie in (0, 1]");
  require(policy.refresh_every >= 1, "policy.refresh_every", "must be >= 1");
  require(policy.eval_every >= 0, "policy.eval_every", "must be >= 0");
  require(policy.eval_episodes >= 1, "policy.eval_episodes", "must be >= 1");
  require(policy.mpc_candidates >= 1, "policy.mpc_candidates", "must be >= 1");
  require(policy.mpc_noise >= 0.0, "policy.mpc_noise", "must be >= 0");
  require(eval_episodes >= 1, "eval.episodes", "must be >= 1");
  require(ablation.lambda_pen >= 0.0, "ablation.lambda_pen", "must be >= 0");
  require(ablation.ensemble_k >= 0, "ablation.ensemble_k", "must be >= 0");
  require(ablation.ensemble_steps >= 0, "ablation.ensemble_steps", "must be >= 0");
  for (int h : ablation.horizons) require(h >= 1, "ablation.horizons", "every horizon must be >= 1");
  require(ablation.timing_trajectories >= 1, "ablation.timing_trajectories", "must be >= 1");
  require(ablation.timing_steps >= 1, "ablation.timing_steps", "must be >= 1");
  require(ablation.timing_repetitions >= 1, "ablation.timing_repetitions", "must be >= 1");
  require(ablation.pca_points >= 3, "ablation.pca_points", "must be >= 3");
  require(!seeds.empty(), "run.seeds", "needs at least one seed");
  require(!experiment.empty() && experiment.find('/') == std::string::npos, "run.experiment",
          "must be a non-empty name without '/'");
}

std::string ExperimentConfig::to_text() const {
  std::string out;
  for (const auto& f : fields()) out += "# " + f.info.doc + "\n" + f.info.key + " = " + f.get(*this) + "\n";
  return out;
}

std::filesystem::path ExperimentConfig::output_root() const {
  if (!out.empty()) return out;
  if (const char* env_out = std::getenv("LOGO_OUT"); env_out && *env_out) return env_out;
  return "runs";
}

PolicyConfig ExperimentConfig::resolved_policy(std::uint64_t seed, double calibrated_c) const {
  PolicyConfig p = policy;
  p.hyper.gamma = env.gamma;
  p.seed = seed;
  p.rollout = rollout;
  p.rollout.clip_constant = rollout.clip_constant > 0.0 ? rollout.clip_constant : calibrated_c;
  p.lambda_pen = ablation.lambda_pen;
  p.mpc = ablation.mpc;
  p.synth = ablation.disable_buffer ? SynthMode::Off
            : ablation.reward_penalty ? SynthMode::RewardPenalty
                                      : SynthMode::Weighted;
  return p;
}

ExperimentConfig parse_config(const std::string& text, ExperimentConfig base) {
  std::istringstream in(text);
  std::string line;
  std::map<std::string, int> seen;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(number), "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (seen.count(key)) throw ConfigError(key, "set twice (lines " + std::to_string(seen[key]) + " and " +
                                                    std::to_string(number) + ")");
    seen[key] = number;
    base.set(key, line.substr(eq + 1));
  }
  return base;
}

ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config", "cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

}  // namespace logo
