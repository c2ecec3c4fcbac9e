#include "logo/world_model.hpp"

#include "logo/adam.hpp"
#include "logo/container.hpp"
#include "logo/csv.hpp"
#include "logo/synth.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace logo {

using ad::Matrix;
using ad::Tape;
using ad::Var;

std::string obs_norm_name(int agent) { return "norm.obs" + std::to_string(agent); }

WorldModelLayout::WorldModelLayout(const EnvSpec& s, int h) : spec(s), hidden(h) {
  const int sd = spec.state_dim();
  const int od = spec.obs_dim();
  const int ad = spec.action_dim();
  const int n = spec.n_agents;
  for (int i = 0; i < n; ++i) {
    const std::string p = "agent" + std::to_string(i);
    PredictiveModelLayout a;
    a.state_encoder = {p + ".state_enc", {sd, h, h}, true};
    a.obs_action_encoder = {p + ".obs_act_enc", {od + ad, h, h}, true};
    a.obs_head = {{p + ".obs_head", {2 * h, h, h, od}}};
    a.obs_decoder = {p + ".obs_dec", {od, h, h, od + ad}};
    a.aux_head = {{p + ".aux_head", {2 * h, h, h, sd + 1}}};
    agents.push_back(std::move(a));
  }
  deductive.encoder = {{"deduce.enc", {sd + 1, h, h, n * od}}};
  deductive.decoder = {"deduce.dec", {n * od, h, h, sd + 1}};
}

std::size_t WorldModelLayout::inference_parameter_count() const {
  std::size_t total = deductive.decoder.parameter_count();
  for (const auto& a : agents)
    total += a.state_encoder.parameter_count() + a.obs_action_encoder.parameter_count() +
             a.obs_head.body.parameter_count();
  return total;
}

std::size_t WorldModelLayout::parameter_count() const {
  std::size_t total = deductive.decoder.parameter_count() + deductive.encoder.parameter_count();
  for (const auto& a : agents)
    total += a.state_encoder.parameter_count() + a.obs_action_encoder.parameter_count() +
             a.obs_head.parameter_count() + a.obs_decoder.parameter_count() +
             a.aux_head.parameter_count();
  return total;
}

// ---------------------------------------------------------------- WorldModel

WorldModel::WorldModel(const EnvSpec& spec, int hidden, std::uint64_t seed) : layout_(spec, hidden) {
  Rng rng(seed, "world-model-init");
  for (const auto& a : layout_.agents) {
    nn::init_mlp(params_, a.state_encoder, rng);
    nn::init_mlp(params_, a.obs_action_encoder, rng);
    nn::init_gaussian(params_, a.obs_head, rng);
    nn::init_mlp(params_, a.obs_decoder, rng);
    nn::init_gaussian(params_, a.aux_head, rng);
  }
  nn::init_gaussian(params_, layout_.deductive.encoder, rng);
  nn::init_mlp(params_, layout_.deductive.decoder, rng);

  // Identity statistics until fit_normalizers() sees data.
  auto identity = [&](const std::string& name, int dim) {
    params_.add(name + ".mean", Matrix<float>::Zero(1, dim));
    params_.add(name + ".std", Matrix<float>::Ones(1, dim));
  };
  identity(kStateNorm, spec.state_dim());
  identity(kRewardNorm, 1);
  for (int i = 0; i < spec.n_agents; ++i) identity(obs_norm_name(i), spec.obs_dim());
}

WorldModel::WorldModel(WorldModelLayout layout, ad::ParamStore<float> params)
    : layout_(std::move(layout)), params_(std::move(params)) {}

bool WorldModel::trainable(const std::string& name) { return name.rfind("norm.", 0) != 0; }

void WorldModel::fit_normalizers(const Dataset& train) {
  if (train.empty()) throw std::invalid_argument("cannot fit normalizers on an empty dataset");
  const TransitionBatch b = make_batch(train);
  Matrix<float> states(2 * b.rows(), b.state.cols());
  states << b.state, b.next_state;
  nn::fit_normalizer(params_, kStateNorm, states);
  nn::fit_normalizer(params_, kRewardNorm, b.reward);
  for (int i = 0; i < spec().n_agents; ++i) {
    Matrix<float> obs(2 * b.rows(), b.obs[static_cast<std::size_t>(i)].cols());
    obs << b.obs[static_cast<std::size_t>(i)], b.next_obs[static_cast<std::size_t>(i)];
    nn::fit_normalizer(params_, obs_norm_name(i), obs);
  }
}

void WorldModel::save(const std::filesystem::path& path) const {
  Container c;
  c.tag = "WMDL";
  c.tensors.push_back(Tensor{"meta.spec", {9}, spec().encode()});
  c.tensors.push_back(Tensor{"meta.hidden", {1}, {static_cast<float>(layout_.hidden)}});
  for (auto& t : to_tensors(params_)) c.tensors.push_back(std::move(t));
  write_container(path, c);
}

WorldModel WorldModel::load(const std::filesystem::path& path) {
  Container c = read_container(path, "WMDL");
  const EnvSpec spec = EnvSpec::decode(c.get("meta.spec").data);
  const int hidden = static_cast<int>(c.get("meta.hidden").data.at(0));
  std::vector<Tensor> rest;
  for (auto& t : c.tensors)
    if (t.name.rfind("meta.", 0) != 0) rest.push_back(std::move(t));
  WorldModel model(WorldModelLayout(spec, hidden), from_tensors(rest));
  WorldModel reference(spec, hidden, 0);
  for (const auto& [name, m] : reference.params().entries()) {
    if (!model.params().contains(name))
      throw BadFormatError("world model checkpoint is missing '" + name + "'");
    const auto& got = model.params().at(name);
    if (got.rows() != m.rows() || got.cols() != m.cols())
      throw BadFormatError("world model checkpoint tensor '" + name + "' has the wrong shape");
  }
  return model;
}

// ---------------------------------------------------------------- batches

template <class T>
WorldBatch<T> normalize_batch(const ad::ParamStore<T>& params, const EnvSpec& spec,
                              const TransitionBatch& batch) {
  WorldBatch<T> out;
  for (int i = 0; i < spec.n_agents; ++i) {
    const auto k = static_cast<std::size_t>(i);
    out.obs.push_back(nn::normalize(params, obs_norm_name(i), batch.obs[k]));
    out.next_obs.push_back(nn::normalize(params, obs_norm_name(i), batch.next_obs[k]));
    out.actions.push_back(batch.actions[k].cast<T>());
  }
  out.state = nn::normalize(params, kStateNorm, batch.state);
  const Matrix<T> ns = nn::normalize(params, kStateNorm, batch.next_state);
  const Matrix<T> r = nn::normalize(params, kRewardNorm, batch.reward);
  out.next_state_reward.resize(ns.rows(), ns.cols() + 1);
  out.next_state_reward << ns, r;
  return out;
}

WorldNoise draw_world_noise(const EnvSpec& spec, Eigen::Index rows, Rng& rng) {
  WorldNoise noise;
  for (int i = 0; i < spec.n_agents; ++i) {
    Matrix<double> m(rows, spec.obs_dim());
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = rng.normal();
    noise.obs.push_back(std::move(m));
  }
  noise.joint_obs.resize(rows, spec.joint_obs_dim());
  for (Eigen::Index k = 0; k < noise.joint_obs.size(); ++k) noise.joint_obs.data()[k] = rng.normal();
  return noise;
}

WorldNoise zero_world_noise(const EnvSpec& spec, Eigen::Index rows) {
  WorldNoise noise;
  for (int i = 0; i < spec.n_agents; ++i) noise.obs.push_back(Matrix<double>::Zero(rows, spec.obs_dim()));
  noise.joint_obs = Matrix<double>::Zero(rows, spec.joint_obs_dim());
  return noise;
}

// ---------------------------------------------------------------- losses

namespace {

template <class T>
struct AgentPass {
  Var obs_action;  // o^i (+) a^i, normalized
  nn::GaussianOut obs;
  Var sampled_obs;
};

template <class T>
Var agent_features(Tape<T>& tape, const PredictiveModelLayout& a, Var state, Var obs_action) {
  Var hs = nn::apply_mlp(tape, a.state_encoder, state);
  Var hoa = nn::apply_mlp(tape, a.obs_action_encoder, obs_action);
  return tape.concat({hs, hoa});
}

template <class T>
Var obs_action_input(Tape<T>& tape, const WorldBatch<T>& b, std::size_t i) {
  Matrix<T> oa(b.rows(), b.obs[i].cols() + b.actions[i].cols());
  oa << b.obs[i], b.actions[i];
  return tape.constant(std::move(oa));
}

template <class T>
Var noise_constant(Tape<T>& tape, const Matrix<double>& noise) {
  return tape.constant(noise.template cast<T>());
}

/// Mean over batch of the row-wise Gaussian NLL.
template <class T>
Var mean_nll(Tape<T>& tape, Var target, const nn::GaussianOut& g) {
  return tape.mean(tape.gaussian_nll(target, g.mean, g.log_std));
}

template <class T>
Var mean_sq_error(Tape<T>& tape, Var prediction, Var target) {
  return tape.mean(tape.squared_norm(tape.sub(prediction, target)));
}

template <class T>
Var average(Tape<T>& tape, const std::vector<Var>& terms) {
  Var acc = terms.front();
  for (std::size_t k = 1; k < terms.size(); ++k) acc = tape.add(acc, terms[k]);
  return tape.scale(acc, T(1) / static_cast<T>(terms.size()));
}

template <class T>
Var predictive_from(Tape<T>& tape, const WorldModelLayout& layout, const WorldBatch<T>& b,
                    const std::vector<AgentPass<T>>& passes) {
  std::vector<Var> terms;
  for (std::size_t i = 0; i < passes.size(); ++i) {
    const auto& a = layout.agents[i];
    Var target = tape.constant(b.next_obs[i]);
    Var enc = mean_nll(tape, target, passes[i].obs);
    Var recon = nn::apply_mlp(tape, a.obs_decoder, passes[i].sampled_obs);
    Var dec = mean_sq_error(tape, recon, passes[i].obs_action);
    terms.push_back(tape.add(enc, dec));
  }
  return average(tape, terms);
}

template <class T>
Var deduce_reg_from(Tape<T>& tape, const WorldModelLayout& layout, const WorldBatch<T>& b,
                    const std::vector<AgentPass<T>>& passes) {
  std::vector<Var> parts;
  for (const auto& p : passes) parts.push_back(tape.stop_gradient(p.sampled_obs));
  Var joint = tape.concat(parts);
  Var recon = nn::apply_mlp(tape, layout.deductive.decoder, joint);
  return mean_sq_error(tape, recon, tape.constant(b.next_state_reward));
}

template <class T>
Var uncertainty_from(Tape<T>& tape, const WorldModelLayout& layout, const WorldBatch<T>& b,
                     const std::vector<Var>& features) {
  Var target = tape.constant(b.next_state_reward);
  std::vector<Var> terms;
  for (std::size_t i = 0; i < features.size(); ++i)
    terms.push_back(mean_nll(tape, target, nn::apply_gaussian(tape, layout.agents[i].aux_head, features[i])));
  return average(tape, terms);
}

/// Shared trunk: per-agent features and E_p outputs (with reparameterized draws).
template <class T>
void agent_passes(Tape<T>& tape, const WorldModelLayout& layout, const WorldBatch<T>& b,
                  const WorldNoise& noise, std::vector<Var>& features, std::vector<AgentPass<T>>& passes) {
  Var state = tape.constant(b.state);
  for (std::size_t i = 0; i < layout.agents.size(); ++i) {
    const auto& a = layout.agents[i];
    AgentPass<T> p;
    p.obs_action = obs_action_input(tape, b, i);
    Var h = agent_features(tape, a, state, p.obs_action);
    p.obs = nn::apply_gaussian(tape, a.obs_head, h);
    p.sampled_obs = tape.gaussian_sample(p.obs.mean, p.obs.log_std, noise_constant(tape, noise.obs[i]));
    features.push_back(h);
    passes.push_back(p);
  }
}

}  // namespace

template <class T>
Var loss_predictive(Tape<T>& tape, const WorldModelLayout& layout, const WorldBatch<T>& batch,
                    const WorldNoise& noise) {
  std::vector<Var> features;
  std::vector<AgentPass<T>> passes;
  agent_passes(tape, layout, batch, noise, features, passes);
  return predictive_from(tape, layout, batch, passes);
}

template <class T>
Var loss_deductive(Tape<T>& tape, const WorldModelLayout& layout, const WorldBatch<T>& batch,
                   const WorldNoise& noise) {
  const auto& d = layout.deductive;
  Var cond = tape.constant(batch.next_state_reward);
  nn::GaussianOut g = nn::apply_gaussian(tape, d.encoder, cond);
  Matrix<T> joint(batch.rows(), layout.spec.joint_obs_dim());
  {
    Eigen::Index at = 0;
    for (const auto& o : batch.next_obs) {
      joint.middleCols(at, o.cols()) = o;
      at += o.cols();
    }
  }
  Var enc = mean_nll(tape, tape.constant(std::move(joint)), g);
  Var sample = tape.gaussian_sample(g.mean, g.log_std, noise_constant(tape, noise.joint_obs));
  Var recon = nn::apply_mlp(tape, d.decoder, sample);
  Var dec = mean_sq_error(tape, recon, cond);
  return tape.add(enc, dec);
}

template <class T>
Var loss_deduce_reg(Tape<T>& tape, const WorldModelLayout& layout, const WorldBatch<T>& batch,
                    const WorldNoise& noise) {
  std::vector<Var> features;
  std::vector<AgentPass<T>> passes;
  agent_passes(tape, layout, batch, noise, features, passes);
  return deduce_reg_from(tape, layout, batch, passes);
}

template <class T>
Var loss_deduce_reg_given(Tape<T>& tape, const WorldModelLayout& layout, const WorldBatch<T>& batch,
                          const std::vector<Matrix<T>>& obs_hat) {
  std::vector<Var> parts;
  for (const auto& o : obs_hat) parts.push_back(tape.constant(o));
  Var recon = nn::apply_mlp(tape, layout.deductive.decoder, tape.concat(parts));
  return mean_sq_error(tape, recon, tape.constant(batch.next_state_reward));
}

template <class T>
std::vector<Matrix<T>> sampled_predicted_obs(const ad::ParamStore<T>& params, const WorldModelLayout& layout,
                                             const WorldBatch<T>& batch, const WorldNoise& noise) {
  Tape<T> tape(params, [](const std::string&) { return false; });
  std::vector<Var> features;
  std::vector<AgentPass<T>> passes;
  agent_passes(tape, layout, batch, noise, features, passes);
  std::vector<Matrix<T>> out;
  for (const auto& p : passes) out.push_back(tape.value(p.sampled_obs));
  return out;
}

template <class T>
Var loss_uncertainty_head(Tape<T>& tape, const WorldModelLayout& layout, const WorldBatch<T>& batch) {
  Var state = tape.constant(batch.state);
  std::vector<Var> features;
  for (std::size_t i = 0; i < layout.agents.size(); ++i)
    features.push_back(agent_features(tape, layout.agents[i], state, obs_action_input(tape, batch, i)));
  return uncertainty_from(tape, layout, batch, features);
}

template <class T>
WorldLosses loss_world(Tape<T>& tape, const WorldModelLayout& layout, const WorldBatch<T>& batch,
                       const WorldNoise& noise) {
  std::vector<Var> features;
  std::vector<AgentPass<T>> passes;
  agent_passes(tape, layout, batch, noise, features, passes);
  WorldLosses out;
  out.predictive = predictive_from(tape, layout, batch, passes);
  out.deductive = loss_deductive(tape, layout, batch, noise);
  out.deduce_reg = deduce_reg_from(tape, layout, batch, passes);
  out.uncertainty = uncertainty_from(tape, layout, batch, features);
  out.total = tape.add(tape.add(tape.add(out.predictive, out.deductive), out.deduce_reg), out.uncertainty);
  return out;
}

// ---------------------------------------------------------------- inference

ModelInput model_input(const TransitionBatch& batch) {
  return ModelInput{batch.obs, batch.actions, batch.state};
}

Prediction predict_next(const WorldModel& model, const ModelInput& input, bool check_finite) {
  const auto& layout = model.layout();
  const auto& params = model.params();
  const EnvSpec& spec = layout.spec;
  const int n = spec.n_agents;
  const int sd = spec.state_dim();
  if (static_cast<int>(input.obs.size()) != n || static_cast<int>(input.actions.size()) != n ||
      input.state.cols() != sd)
    throw ad::ShapeError("predict_next input does not match the env spec");

  Tape<float> tape(params, [](const std::string&) { return false; });
  tape.set_check_finite(check_finite);
  Var state = tape.constant(nn::normalize(params, kStateNorm, input.state));
  std::vector<Var> obs_means;
  Matrix<float> aux_sum;
  Eigen::RowVectorXf precision_sum;
  Prediction out;
  for (int i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const auto& a = layout.agents[k];
    Matrix<float> oa(input.rows(), spec.obs_dim() + spec.action_dim());
    oa << nn::normalize(params, obs_norm_name(i), input.obs[k]), input.actions[k];
    Var h = agent_features(tape, a, state, tape.constant(std::move(oa)));
    Var mean = nn::apply_mlp(tape, a.obs_head.body, h);
    obs_means.push_back(mean);
    const Matrix<float>& aux = tape.value(nn::apply_mlp(tape, a.aux_head.body, h));
    const Eigen::RowVectorXf precision =
        (-2.0f * params.at(a.aux_head.log_std_name())
                     .array()
                     .max(static_cast<float>(nn::kMinLogStd))
                     .min(static_cast<float>(nn::kMaxLogStd)))
            .exp()
            .matrix();
    const Matrix<float> weighted = aux.array().rowwise() * precision.array();
    if (i == 0) {
      aux_sum = weighted;
      precision_sum = precision;
    } else {
      aux_sum += weighted;
      precision_sum += precision;
    }
    out.next_obs.push_back(nn::denormalize(params, obs_norm_name(i), tape.value(mean)));
  }
  const Matrix<float>& deduced = tape.value(nn::apply_mlp(tape, layout.deductive.decoder, tape.concat(obs_means)));
  // Per-agent Gaussian heads fused by inverse variance.
  aux_sum.array().rowwise() /= precision_sum.array();

  out.next_state = nn::denormalize(params, kStateNorm, Matrix<float>(deduced.leftCols(sd)));
  out.reward = nn::denormalize(params, kRewardNorm, Matrix<float>(deduced.rightCols(1)));
  out.aux_state = nn::denormalize(params, kStateNorm, Matrix<float>(aux_sum.leftCols(sd)));
  out.uncertainty = (out.aux_state - out.next_state).rowwise().norm();
  if (check_finite && !(out.next_state.allFinite() && out.reward.allFinite() && out.uncertainty.allFinite()))
    throw ad::NonFiniteError("predict_next produced a non-finite output");
  return out;
}

// ---------------------------------------------------------------- training

double one_step_state_mse(const WorldModel& model, const Dataset& data) {
  if (data.empty()) throw std::invalid_argument("one_step_state_mse on an empty dataset");
  double total = 0.0;
  const std::size_t chunk = 512;
  for (std::size_t begin = 0; begin < data.size(); begin += chunk) {
    std::vector<const Transition*> rows;
    for (std::size_t k = begin; k < std::min(data.size(), begin + chunk); ++k) rows.push_back(&data.transitions[k]);
    const TransitionBatch b = make_batch(rows);
    const Prediction p = predict_next(model, model_input(b));
    total += (p.next_state - b.next_state).cast<double>().array().square().sum();
  }
  return total / static_cast<double>(data.size() * static_cast<std::size_t>(model.spec().state_dim()));
}

WorldModelTrainResult train_world_model(const Dataset& train, const Dataset& val,
                                        const WorldModelConfig& config) {
  if (train.empty()) throw std::invalid_argument("world model training needs a non-empty train split");
  if (!(train.spec == val.spec)) throw EnvMismatchError("env mismatch between train and validation splits");
  WorldModel model(train.spec, config.hidden, derive_seed(config.seed, "world-model"));
  model.fit_normalizers(train);

  std::vector<std::string> names;
  for (const auto& name : model.params().names())
    if (WorldModel::trainable(name)) names.push_back(name);
  ad::Adam<float> adam({config.learning_rate}, names);
  Rng rng(config.seed, "world-model-train");

  std::vector<WorldLogRow> log;
  std::vector<std::size_t> indices(static_cast<std::size_t>(config.batch_size));
  for (int step = 1; step <= config.steps; ++step) {
    for (auto& k : indices) k = rng.index(train.size());
    const TransitionBatch tb = make_batch(train, indices);
    const WorldBatch<float> wb = normalize_batch(model.params(), train.spec, tb);
    const WorldNoise noise = draw_world_noise(train.spec, wb.rows(), rng);

    Tape<float> tape(model.params(), WorldModel::trainable);
    WorldLosses losses;
    try {
      losses = loss_world(tape, model.layout(), wb, noise);
    } catch (const ad::NonFiniteError& e) {
      throw DivergenceError("world model training diverged at step " + std::to_string(step) + ": " + e.what());
    }
    WorldLogRow row;
    row.step = step;
    row.predictive = tape.scalar(losses.predictive);
    row.deductive = tape.scalar(losses.deductive);
    row.deduce_reg = tape.scalar(losses.deduce_reg);
    row.uncertainty = tape.scalar(losses.uncertainty);
    const double total = tape.scalar(losses.total);
    if (!std::isfinite(total) || total > config.divergence_limit)
      throw DivergenceError("world model loss " + std::to_string(total) + " exceeded the divergence limit at step " +
                            std::to_string(step));
    adam.step(model.params(), tape.backward(losses.total));
    if (config.validate_every > 0 && step % config.validate_every == 0 && !val.empty())
      row.val_mse = one_step_state_mse(model, val);
    log.push_back(row);
  }

  WorldModelTrainResult result{std::move(model), std::move(log), 0.0};
  if (!val.empty()) result.clip_constant = calibrate_C(result.model, val).clip_constant;
  return result;
}

void write_world_log_csv(const std::filesystem::path& path, const std::vector<WorldLogRow>& log) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << csv::row({"step", "L_p", "L_d", "L_Rd", "L_Eps", "val_mse"});
  for (const auto& r : log)
    out << csv::row({std::to_string(r.step), csv::num(r.predictive), csv::num(r.deductive), csv::num(r.deduce_reg),
                     csv::num(r.uncertainty), r.val_mse ? csv::num(*r.val_mse) : std::string()});
}

#define LOGO_INSTANTIATE_WORLD(T)                                                                   \
  template WorldBatch<T> normalize_batch<T>(const ad::ParamStore<T>&, const EnvSpec&,              \
                                            const TransitionBatch&);                               \
  template Var loss_predictive<T>(Tape<T>&, const WorldModelLayout&, const WorldBatch<T>&,         \
                                  const WorldNoise&);                                              \
  template Var loss_deductive<T>(Tape<T>&, const WorldModelLayout&, const WorldBatch<T>&,          \
                                 const WorldNoise&);                                               \
  template Var loss_deduce_reg<T>(Tape<T>&, const WorldModelLayout&, const WorldBatch<T>&,         \
                                  const WorldNoise&);                                              \
  template Var loss_deduce_reg_given<T>(Tape<T>&, const WorldModelLayout&, const WorldBatch<T>&,             \
                                        const std::vector<Matrix<T>>&);                                     \
  template std::vector<Matrix<T>> sampled_predicted_obs<T>(const ad::ParamStore<T>&, const WorldModelLayout&, \
                                                           const WorldBatch<T>&, const WorldNoise&);         \
  template Var loss_uncertainty_head<T>(Tape<T>&, const WorldModelLayout&, const WorldBatch<T>&);  \
  template WorldLosses loss_world<T>(Tape<T>&, const WorldModelLayout&, const WorldBatch<T>&,      \
                                     const WorldNoise&);

LOGO_INSTANTIATE_WORLD(float)
LOGO_INSTANTIATE_WORLD(double)

#undef LOGO_INSTANTIATE_WORLD

}  // namespace logo
