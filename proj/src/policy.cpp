#include "logo/policy.hpp"

#include "logo/adam.hpp"
#include "logo/container.hpp"
#include "logo/csv.hpp"
#include "logo/stats.hpp"

#include <cmath>
#include <fstream>
#include <limits>

namespace logo {

using ad::Matrix;
using ad::Tape;
using ad::Var;

PolicyLayout::PolicyLayout(const EnvSpec& s, int h) : spec(s), hidden(h) {
  const int in = spec.state_dim() + spec.joint_action_dim();
  q = {"q", {in, h, h, 1}};
  q_target = {"q_target", {in, h, h, 1}};
  for (int i = 0; i < spec.n_agents; ++i)
    actors.push_back({"pi" + std::to_string(i), {spec.obs_dim(), h, h, spec.action_dim()}, true});
}

bool is_critic_param(const std::string& name) { return name.rfind("q.", 0) == 0; }
bool is_actor_param(const std::string& name) { return name.rfind("pi", 0) == 0; }

namespace {

const std::string kTargetPrefix = "q_target.";

std::string target_name(const std::string& online) { return kTargetPrefix + online.substr(2); }

bool never_trainable(const std::string&) { return false; }

}  // namespace

PolicyBundle::PolicyBundle(const EnvSpec& spec, int hidden, PolicyHyper hyper, std::uint64_t seed)
    : layout_(spec, hidden), hyper_(hyper) {
  Rng rng(seed, "policy-init");
  nn::init_mlp(params_, layout_.q, rng);
  for (const auto& name : params_.names("q."))
    params_.add(target_name(name), params_.at(name));
  for (const auto& a : layout_.actors) nn::init_mlp(params_, a, rng);
  params_.add(kStateNorm + ".mean", Matrix<float>::Zero(1, spec.state_dim()));
  params_.add(kStateNorm + ".std", Matrix<float>::Ones(1, spec.state_dim()));
  for (int i = 0; i < spec.n_agents; ++i) {
    params_.add(obs_norm_name(i) + ".mean", Matrix<float>::Zero(1, spec.obs_dim()));
    params_.add(obs_norm_name(i) + ".std", Matrix<float>::Ones(1, spec.obs_dim()));
  }
}

PolicyBundle::PolicyBundle(PolicyLayout layout, PolicyHyper hyper, ad::ParamStore<float> params)
    : layout_(std::move(layout)), hyper_(hyper), params_(std::move(params)) {}

void PolicyBundle::fit_normalizers(const Dataset& data) {
  if (data.empty()) throw std::invalid_argument("cannot fit policy normalizers on an empty dataset");
  const TransitionBatch b = make_batch(data);
  Matrix<float> states(2 * b.rows(), b.state.cols());
  states << b.state, b.next_state;
  nn::fit_normalizer(params_, kStateNorm, states);
  for (int i = 0; i < spec().n_agents; ++i) {
    const auto k = static_cast<std::size_t>(i);
    Matrix<float> obs(2 * b.rows(), b.obs[k].cols());
    obs << b.obs[k], b.next_obs[k];
    nn::fit_normalizer(params_, obs_norm_name(i), obs);
  }
}

std::vector<Matrix<float>> PolicyBundle::act(const std::vector<Matrix<float>>& obs) const {
  if (obs.size() != layout_.actors.size()) throw ad::ShapeError("act: wrong number of agents");
  std::vector<Matrix<float>> normalized;
  for (std::size_t i = 0; i < obs.size(); ++i)
    normalized.push_back(nn::normalize(params_, obs_norm_name(static_cast<int>(i)), obs[i]));
  Tape<float> tape(params_, never_trainable);
  std::vector<Matrix<float>> out;
  for (const Var v : actor_outputs(tape, layout_, normalized)) out.push_back(tape.value(v));
  return out;
}

JointAction PolicyBundle::act(const JointObservation& obs) const {
  std::vector<Matrix<float>> rows;
  for (const auto& o : obs) rows.push_back(o.transpose());
  JointAction out;
  for (const auto& a : act(rows)) out.push_back(a.row(0).transpose());
  return out;
}

Matrix<float> PolicyBundle::target_value(const Matrix<float>& state, const std::vector<Matrix<float>>& actions) const {
  Tape<float> tape(params_, never_trainable);
  Var s = tape.constant(nn::normalize(params_, kStateNorm, state));
  std::vector<Var> a;
  for (const auto& m : actions) a.push_back(tape.constant(m));
  return tape.value(q_value(tape, layout_.q_target, s, a));
}

void PolicyBundle::polyak_update() {
  const float tau = static_cast<float>(hyper_.tau);
  for (const auto& name : params_.names("q.")) {
    Matrix<float>& target = params_.at(target_name(name));
    target = (1.0f - tau) * target + tau * params_.at(name);
  }
}

void PolicyBundle::save(const std::filesystem::path& path) const {
  Container c;
  c.tag = "PLCY";
  c.tensors.push_back(Tensor{"meta.spec", {9}, spec().encode()});
  c.tensors.push_back(Tensor{"meta.hidden", {1}, {static_cast<float>(layout_.hidden)}});
  c.tensors.push_back(Tensor{"meta.hyper",
                             {4},
                             {static_cast<float>(hyper_.alpha), static_cast<float>(hyper_.bc_lambda),
                              static_cast<float>(hyper_.gamma), static_cast<float>(hyper_.tau)}});
  for (auto& t : to_tensors(params_)) c.tensors.push_back(std::move(t));
  write_container(path, c);
}

PolicyBundle PolicyBundle::load(const std::filesystem::path& path) {
  Container c = read_container(path, "PLCY");
  const EnvSpec spec = EnvSpec::decode(c.get("meta.spec").data);
  const int hidden = static_cast<int>(c.get("meta.hidden").data.at(0));
  const auto& h = c.get("meta.hyper").data;
  if (h.size() != 4) throw BadFormatError("policy checkpoint has a malformed meta.hyper");
  PolicyHyper hyper{h[0], h[1], h[2], h[3]};
  std::vector<Tensor> rest;
  for (auto& t : c.tensors)
    if (t.name.rfind("meta.", 0) != 0) rest.push_back(std::move(t));
  PolicyBundle bundle(PolicyLayout(spec, hidden), hyper, from_tensors(rest));
  const PolicyBundle reference(spec, hidden, hyper, 0);
  for (const auto& [name, m] : reference.params().entries()) {
    if (!bundle.params().contains(name)) throw BadFormatError("policy checkpoint is missing '" + name + "'");
    const auto& got = bundle.params().at(name);
    if (got.rows() != m.rows() || got.cols() != m.cols())
      throw BadFormatError("policy checkpoint tensor '" + name + "' has the wrong shape");
  }
  return bundle;
}

// ---------------------------------------------------------------- losses

template <class T>
PolicyBatch<T> normalize_policy_batch(const ad::ParamStore<T>& params, const EnvSpec& spec,
                                      const TransitionBatch& batch) {
  PolicyBatch<T> out;
  for (int i = 0; i < spec.n_agents; ++i) {
    const auto k = static_cast<std::size_t>(i);
    out.obs.push_back(nn::normalize(params, obs_norm_name(i), batch.obs[k]));
    out.next_obs.push_back(nn::normalize(params, obs_norm_name(i), batch.next_obs[k]));
    out.actions.push_back(batch.actions[k].cast<T>());
  }
  out.state = nn::normalize(params, kStateNorm, batch.state);
  out.next_state = nn::normalize(params, kStateNorm, batch.next_state);
  out.reward = batch.reward.cast<T>();
  out.done = batch.done.cast<T>();
  return out;
}

template <class T>
Matrix<T> bellman_combine(const Matrix<T>& reward, const Matrix<T>& done, const Matrix<T>& next_value,
                          double gamma) {
  const T g = static_cast<T>(gamma);
  return (reward.array() + g * (T(1) - done.array()) * next_value.array()).matrix();
}

template <class T>
Var q_value(Tape<T>& tape, const nn::MlpSpec& q, Var state, const std::vector<Var>& actions) {
  std::vector<Var> parts{state};
  parts.insert(parts.end(), actions.begin(), actions.end());
  return nn::apply_mlp(tape, q, tape.concat(parts));
}

template <class T>
std::vector<Var> actor_outputs(Tape<T>& tape, const PolicyLayout& layout, const std::vector<Matrix<T>>& obs) {
  std::vector<Var> out;
  for (std::size_t i = 0; i < layout.actors.size(); ++i)
    out.push_back(nn::apply_mlp(tape, layout.actors[i], tape.constant(obs[i])));
  return out;
}

template <class T>
Matrix<T> bellman_target(const ad::ParamStore<T>& params, const PolicyLayout& layout, const PolicyBatch<T>& batch,
                         double gamma) {
  Tape<T> tape(params, never_trainable);
  const std::vector<Var> next_actions = actor_outputs(tape, layout, batch.next_obs);
  const Var v = q_value(tape, layout.q_target, tape.constant(batch.next_state), next_actions);
  return bellman_combine<T>(batch.reward, batch.done, tape.value(v), gamma);
}

template <class T>
Var cql_q_loss(Tape<T>& tape, const PolicyLayout& layout, const PolicyBatch<T>& batch, const Matrix<T>& targets,
               double alpha) {
  Var s = tape.constant(batch.state);
  std::vector<Var> data_actions;
  for (const auto& a : batch.actions) data_actions.push_back(tape.constant(a));
  Var q_data = q_value(tape, layout.q, s, data_actions);
  Var bellman = tape.scale(tape.mean(tape.squared_norm(tape.sub(q_data, tape.constant(targets)))), T(0.5));
  if (alpha == 0.0) return bellman;
  std::vector<Var> pi;
  for (Var v : actor_outputs(tape, layout, batch.obs)) pi.push_back(tape.stop_gradient(v));
  Var q_pi = q_value(tape, layout.q, s, pi);
  Var reg = tape.sub(tape.mean(q_pi), tape.mean(q_data));
  return tape.add(tape.scale(reg, static_cast<T>(alpha)), bellman);
}

namespace {

template <class T>
Var mean_agent_distance(Tape<T>& tape, const std::vector<Var>& pi, const std::vector<Matrix<T>>& targets) {
  Var acc = tape.mean(tape.squared_norm(tape.sub(pi[0], tape.constant(targets[0]))));
  for (std::size_t i = 1; i < pi.size(); ++i)
    acc = tape.add(acc, tape.mean(tape.squared_norm(tape.sub(pi[i], tape.constant(targets[i])))));
  return tape.scale(acc, T(1) / static_cast<T>(pi.size()));
}

template <class T>
Var policy_loss_from(Tape<T>& tape, const PolicyLayout& layout, const PolicyBatch<T>& batch, double lambda,
                     const std::vector<Var>& pi) {
  Var q_pi = q_value(tape, layout.q, tape.constant(batch.state), pi);
  Var actor = tape.scale(tape.mean(q_pi), T(-1));
  if (lambda == 0.0) return actor;
  return tape.add(actor, tape.scale(mean_agent_distance(tape, pi, batch.actions), static_cast<T>(lambda)));
}

}  // namespace

template <class T>
Var policy_loss(Tape<T>& tape, const PolicyLayout& layout, const PolicyBatch<T>& batch, double lambda) {
  return policy_loss_from(tape, layout, batch, lambda, actor_outputs(tape, layout, batch.obs));
}

template <class T>
Var mpc_policy_loss(Tape<T>& tape, const PolicyLayout& layout, const PolicyBatch<T>& batch, double lambda,
                    const std::vector<Matrix<T>>& a_max) {
  const std::vector<Var> pi = actor_outputs(tape, layout, batch.obs);
  Var base = policy_loss_from(tape, layout, batch, lambda, pi);
  return tape.add(base, mean_agent_distance(tape, pi, a_max));
}

// ---------------------------------------------------------------- MPC

MpcChoice mpc_select_action(const PolicyBundle& bundle, const WorldModel& model, const std::vector<Matrix<float>>& obs,
                            const Matrix<float>& state, int k, Rng& rng, double noise) {
  if (k < 1) throw std::invalid_argument("MPC needs at least one candidate");
  const Eigen::Index rows = state.rows();
  const std::vector<Matrix<float>> mean = bundle.act(obs);
  MpcChoice out;
  out.scores.resize(rows, k);
  std::vector<std::vector<Matrix<float>>> candidates;
  for (int c = 0; c < k; ++c) {
    std::vector<Matrix<float>> cand = mean;
    if (c > 0)
      for (auto& a : cand)
        for (Eigen::Index j = 0; j < a.size(); ++j)
          a.data()[j] = std::clamp(a.data()[j] + static_cast<float>(rng.normal(0.0, noise)), -1.0f, 1.0f);
    const Prediction p = predict_next(model, ModelInput{obs, cand, state}, false);
    const Matrix<float> next_value = bundle.target_value(p.next_state, bundle.act(p.next_obs));
    for (Eigen::Index r = 0; r < rows; ++r) {
      const float score = p.reward(r, 0) + static_cast<float>(bundle.hyper().gamma) * next_value(r, 0);
      out.scores(r, c) = std::isfinite(score) ? score : -std::numeric_limits<float>::infinity();
    }
    candidates.push_back(std::move(cand));
  }
  out.actions = mean;
  out.chosen.assign(static_cast<std::size_t>(rows), 0);
  for (Eigen::Index r = 0; r < rows; ++r) {
    int best = 0;
    for (int c = 1; c < k; ++c)
      if (out.scores(r, c) > out.scores(r, best)) best = c;
    out.chosen[static_cast<std::size_t>(r)] = best;
    for (std::size_t i = 0; i < mean.size(); ++i)
      out.actions[i].row(r) = candidates[static_cast<std::size_t>(best)][i].row(r);
  }
  return out;
}

// ---------------------------------------------------------------- training

PolicyTrainResult train_policy(const Dataset& data, const WorldModel* model, const PolicyConfig& config) {
  if (data.empty()) throw std::invalid_argument("policy training needs a non-empty dataset");
  const bool synth = config.synth != SynthMode::Off;
  if ((synth || config.mpc) && model == nullptr)
    throw std::invalid_argument("synthetic replay and MPC need a trained world model");
  if (model != nullptr && !(model->spec() == data.spec))
    throw EnvMismatchError("world model and dataset were built for different envs");

  PolicyBundle bundle(data.spec, config.hidden, config.hyper, derive_seed(config.seed, "policy"));
  bundle.fit_normalizers(data);
  std::vector<PolicyLogRow> log;

  std::vector<std::string> critic, actor;
  for (const auto& name : bundle.params().names()) {
    if (is_critic_param(name)) critic.push_back(name);
    if (is_actor_param(name)) actor.push_back(name);
  }
  ad::Adam<float> q_adam({config.learning_rate}, critic);
  ad::Adam<float> pi_adam({config.learning_rate}, actor);
  Rng rng(config.seed, "policy-train");
  Rng mpc_rng(config.seed, "policy-mpc");
  SyntheticBuffer buffer(data.spec);
  const SynthSampling sampling = config.synth == SynthMode::Weighted ? SynthSampling::Weighted : SynthSampling::Uniform;
  const auto& layout = bundle.layout();

  for (int step = 1; step <= config.steps; ++step) {
    if (synth && (step - 1) % std::max(1, config.refresh_every) == 0) {
      const BatchActor act = [&bundle](const std::vector<Matrix<float>>& obs) { return bundle.act(obs); };
      SyntheticBuffer fresh = generate_rollouts(*model, act, data, config.rollout,
                                                derive_seed(config.seed, "policy-refresh", buffer.epoch()));
      if (config.synth == SynthMode::RewardPenalty) apply_reward_penalty(fresh, config.lambda_pen);
      buffer.replace(std::vector<Transition>(fresh.transitions()));
    }

    const MixedBatch mb = mixed_minibatch(data, buffer, config.batch_size, rng, sampling);
    const PolicyBatch<float> pb = normalize_policy_batch(bundle.params(), data.spec, mb.batch);
    const Matrix<float> targets = bellman_target(bundle.params(), layout, pb, bundle.hyper().gamma);

    PolicyLogRow row;
    row.step = step;
    row.buffer_size = static_cast<int>(buffer.size());
    row.synthetic_share = static_cast<double>(mb.synthetic_indices.size()) / config.batch_size;
    {
      Tape<float> tape(bundle.params(), is_critic_param);
      Var loss = cql_q_loss(tape, layout, pb, targets, bundle.hyper().alpha);
      row.q_loss = tape.scalar(loss);
      if (!std::isfinite(row.q_loss) || std::abs(row.q_loss) > config.divergence_limit)
        throw DivergenceError("critic loss " + std::to_string(row.q_loss) + " at step " + std::to_string(step));
      q_adam.step(bundle.params(), tape.backward(loss));
    }
    {
      Tape<float> tape(bundle.params(), is_actor_param);
      double lambda = 0.0;
      if (config.hyper.bc_lambda > 0.0) {
        Tape<float> probe(bundle.params(), never_trainable);
        const std::vector<Var> pi = actor_outputs(probe, layout, pb.obs);
        const Matrix<float>& q = probe.value(q_value(probe, layout.q, probe.constant(pb.state), pi));
        lambda = q.cwiseAbs().mean() / config.hyper.bc_lambda;
      }
      Var loss;
      if (config.mpc) {
        const MpcChoice choice = mpc_select_action(bundle, *model, mb.batch.obs, mb.batch.state,
                                                   config.mpc_candidates, mpc_rng, config.mpc_noise);
        loss = mpc_policy_loss(tape, layout, pb, lambda, choice.actions);
      } else {
        loss = policy_loss(tape, layout, pb, lambda);
      }
      row.pi_loss = tape.scalar(loss);
      if (!std::isfinite(row.pi_loss) || std::abs(row.pi_loss) > config.divergence_limit)
        throw DivergenceError("actor loss " + std::to_string(row.pi_loss) + " at step " + std::to_string(step));
      pi_adam.step(bundle.params(), tape.backward(loss));
    }
    bundle.polyak_update();

    if (config.eval_every > 0 && step % config.eval_every == 0)
      row.eval_return = evaluate(bundle, config.eval_episodes, derive_seed(config.seed, "policy-eval")).mean_return;
    log.push_back(row);
  }
  return {std::move(bundle), std::move(log)};
}

void write_policy_log_csv(const std::filesystem::path& path, const std::vector<PolicyLogRow>& log) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << csv::row({"step", "q_loss", "pi_loss", "synthetic_share", "buffer_size", "eval_return"});
  for (const auto& r : log)
    out << csv::row({std::to_string(r.step), csv::num(r.q_loss), csv::num(r.pi_loss), csv::num(r.synthetic_share),
                     std::to_string(r.buffer_size), r.eval_return ? csv::num(*r.eval_return) : std::string()});
}

// ---------------------------------------------------------------- evaluation

EvalResult evaluate_actor(const EnvSpec& spec, const JointActor& actor, int episodes, std::uint64_t seed) {
  if (episodes < 1) throw std::invalid_argument("evaluation needs at least one episode");
  const ParticleEnv env(spec);
  EvalResult out;
  for (int e = 0; e < episodes; ++e) {
    auto [state, obs] = env.reset(derive_seed(seed, "eval-episode", static_cast<std::uint64_t>(e)));
    double total = 0.0;
    while (state.step < spec.episode_cap) {
      StepResult r = env.step(state, actor(env, state, obs));
      total += r.reward;
      state = std::move(r.state);
      obs = std::move(r.obs);
    }
    out.returns.push_back(total);
  }
  out.mean_return = stats::mean(out.returns);
  out.std_return = stats::stddev(out.returns);
  return out;
}

EvalResult evaluate(const PolicyBundle& bundle, int episodes, std::uint64_t seed) {
  return evaluate_actor(
      bundle.spec(), [&bundle](const ParticleEnv&, const EnvState&, const JointObservation& obs) { return bundle.act(obs); },
      episodes, seed);
}

void write_eval_csv(const std::filesystem::path& path, std::uint64_t seed, const EvalResult& result) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << csv::row({"seed", "episode", "return"});
  for (std::size_t e = 0; e < result.returns.size(); ++e)
    out << csv::row({std::to_string(seed), std::to_string(e), csv::num(result.returns[e])});
}

#define LOGO_INSTANTIATE_POLICY(T)                                                                               \
  template PolicyBatch<T> normalize_policy_batch<T>(const ad::ParamStore<T>&, const EnvSpec&,                   \
                                                    const TransitionBatch&);                                    \
  template Matrix<T> bellman_combine<T>(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&, double);          \
  template Matrix<T> bellman_target<T>(const ad::ParamStore<T>&, const PolicyLayout&, const PolicyBatch<T>&,    \
                                       double);                                                                 \
  template Var q_value<T>(Tape<T>&, const nn::MlpSpec&, Var, const std::vector<Var>&);                         \
  template std::vector<Var> actor_outputs<T>(Tape<T>&, const PolicyLayout&, const std::vector<Matrix<T>>&);    \
  template Var cql_q_loss<T>(Tape<T>&, const PolicyLayout&, const PolicyBatch<T>&, const Matrix<T>&, double);  \
  template Var policy_loss<T>(Tape<T>&, const PolicyLayout&, const PolicyBatch<T>&, double);                   \
  template Var mpc_policy_loss<T>(Tape<T>&, const PolicyLayout&, const PolicyBatch<T>&, double,                \
                                  const std::vector<Matrix<T>>&);

LOGO_INSTANTIATE_POLICY(float)
LOGO_INSTANTIATE_POLICY(double)

#undef LOGO_INSTANTIATE_POLICY

}  // namespace logo
