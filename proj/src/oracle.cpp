#include "logo/oracle.hpp"

#include "logo/adam.hpp"
#include "logo/csv.hpp"
#include "logo/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace logo {

using ad::Matrix;
using ad::Tape;
using ad::Var;

// ---------------------------------------------------------------- tabular

double QTable::state_value(int s) const {
  double best = -std::numeric_limits<double>::infinity();
  for (int a = 0; a < num_actions; ++a) best = std::max(best, at(s, a));
  return best;
}

std::vector<double> bellman_backup(const TabularMDP& mdp, const std::vector<double>& q) {
  const int S = mdp.num_states;
  const int A = mdp.num_actions;
  std::vector<double> v(static_cast<std::size_t>(S));
  for (int s = 0; s < S; ++s) {
    double best = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < A; ++a) best = std::max(best, q[static_cast<std::size_t>(s * A + a)]);
    v[static_cast<std::size_t>(s)] = best;
  }
  std::vector<double> out(q.size());
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      double next = 0.0;
      for (int n = 0; n < S; ++n) next += mdp.p(s, a, n) * v[static_cast<std::size_t>(n)];
      out[static_cast<std::size_t>(s * A + a)] = mdp.r(s, a) + mdp.gamma * next;
    }
  return out;
}

namespace {

double sup_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) d = std::max(d, std::abs(a[k] - b[k]));
  return d;
}

}  // namespace

QTable value_iteration(const TabularMDP& mdp, double tol) {
  mdp.validate();
  if (!(tol > 0.0)) throw std::invalid_argument("value iteration tolerance must be positive");
  if (!(mdp.gamma >= 0.0 && mdp.gamma < 1.0)) throw std::invalid_argument("value iteration needs gamma in [0, 1)");
  QTable out;
  out.num_states = mdp.num_states;
  out.num_actions = mdp.num_actions;
  out.gamma = mdp.gamma;
  out.tolerance = tol;
  out.values.assign(static_cast<std::size_t>(mdp.num_states * mdp.num_actions), 0.0);
  // Contraction: stopping at step size tol (1 - gamma) leaves |Q - Q*| <= gamma * tol.
  const double step_tol = tol * (1.0 - mdp.gamma);
  while (true) {
    std::vector<double> next = bellman_backup(mdp, out.values);
    const double step = sup_distance(next, out.values);
    out.values = std::move(next);
    ++out.iterations;
    if (step < step_tol || mdp.gamma == 0.0) break;
  }
  out.residual = sup_distance(bellman_backup(mdp, out.values), out.values);
  return out;
}

double theorem1_bound(double lipschitz_r, double lipschitz_q, double gamma, const ErrorInjection& inj) {
  return (lipschitz_r + gamma * lipschitz_q) * inj.eps_state + inj.eps_reward + gamma * inj.eps_q;
}

namespace {

/// Linear interpolation of column `a` of a row-major [S, A] table at x in [0, S-1].
double interpolate(const std::vector<double>& table, int S, int A, int a, double x) {
  x = std::clamp(x, 0.0, static_cast<double>(S - 1));
  const int lo = std::min(static_cast<int>(std::floor(x)), S - 1);
  const int hi = std::min(lo + 1, S - 1);
  const double f = x - lo;
  return (1.0 - f) * table[static_cast<std::size_t>(lo * A + a)] + f * table[static_cast<std::size_t>(hi * A + a)];
}

double max_neighbour_difference(const std::vector<double>& table, int S, int A) {
  double L = 0.0;
  for (int s = 0; s + 1 < S; ++s)
    for (int a = 0; a < A; ++a)
      L = std::max(L, std::abs(table[static_cast<std::size_t>((s + 1) * A + a)] - table[static_cast<std::size_t>(s * A + a)]));
  return L;
}

double perturb(Rng& rng, double eps) {
  if (eps == 0.0) return 0.0;
  // Half of the draws sit on the boundary to probe the worst case.
  if (rng.uniform() < 0.5) return rng.uniform() < 0.5 ? -eps : eps;
  return rng.uniform(-eps, eps);
}

}  // namespace

Theorem1Report theorem1_check(const TabularMDP& mdp, const ErrorInjection& inj, int trials, std::uint64_t seed,
                              double tol) {
  if (inj.eps_state < 0.0 || inj.eps_reward < 0.0 || inj.eps_q < 0.0)
    throw std::invalid_argument("error injection bounds must be non-negative");
  const QTable q = value_iteration(mdp, tol);
  const int S = mdp.num_states;
  const int A = mdp.num_actions;
  Theorem1Report report;
  report.trials = trials;
  report.lipschitz_r = max_neighbour_difference(mdp.reward, S, A);
  report.lipschitz_q = max_neighbour_difference(q.values, S, A);
  report.bound = theorem1_bound(report.lipschitz_r, report.lipschitz_q, mdp.gamma, inj);
  // Q is only a fixed point to within gamma * tol; allow for that and for rounding.
  const double slack = 2.0 * tol + 1e-12 * (1.0 + report.bound);

  Rng rng(seed, "theorem1");
  for (int t = 0; t < trials; ++t) {
    double trial_error = 0.0;
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a) {
        const double ds = perturb(rng, inj.eps_state);
        const double dr = perturb(rng, inj.eps_reward);
        if (std::abs(ds) > inj.eps_state || std::abs(dr) > inj.eps_reward)
          throw std::logic_error("error injection exceeded its bound");
        const double reward = interpolate(mdp.reward, S, A, a, s + ds) + dr;
        double next = 0.0;
        for (int n = 0; n < S; ++n) {
          const double p = mdp.p(s, a, n);
          if (p == 0.0) continue;
          const double dn = perturb(rng, inj.eps_state);
          const double dq = perturb(rng, inj.eps_q);
          if (std::abs(dn) > inj.eps_state || std::abs(dq) > inj.eps_q)
            throw std::logic_error("error injection exceeded its bound");
          double best = -std::numeric_limits<double>::infinity();
          for (int b = 0; b < A; ++b) best = std::max(best, interpolate(q.values, S, A, b, n + dn));
          next += p * (best + dq);
        }
        const double estimate = reward + mdp.gamma * next;
        trial_error = std::max(trial_error, std::abs(estimate - q.at(s, a)));
      }
    report.max_error = std::max(report.max_error, trial_error);
    if (trial_error > report.bound + slack) ++report.violations;
  }
  return report;
}

// ---------------------------------------------------------------- direct model

DirectModelLayout::DirectModelLayout(const EnvSpec& s, int h, const std::string& prefix) : spec(s), hidden(h) {
  state_encoder = {prefix + ".state_enc", {spec.state_dim(), h, h}, true};
  action_encoder = {prefix + ".act_enc", {spec.joint_action_dim(), h, h}, true};
  head = {{prefix + ".head", {2 * h, h, h, spec.state_dim()}}};
}

std::size_t DirectModelLayout::inference_parameter_count() const {
  return state_encoder.parameter_count() + action_encoder.parameter_count() + head.body.parameter_count();
}

int direct_width_for_budget(const EnvSpec& spec, std::size_t budget) {
  int best = 1;
  double best_gap = std::numeric_limits<double>::infinity();
  for (int h = 1; h <= 2048; ++h) {
    const double gap = std::abs(static_cast<double>(DirectModelLayout(spec, h).inference_parameter_count()) -
                                static_cast<double>(budget));
    if (gap < best_gap) {
      best_gap = gap;
      best = h;
    }
  }
  return best;
}

DirectModel::DirectModel(const EnvSpec& spec, int hidden, std::uint64_t seed) : layout_(spec, hidden) {
  Rng rng(seed, "direct-init");
  nn::init_mlp(params_, layout_.state_encoder, rng);
  nn::init_mlp(params_, layout_.action_encoder, rng);
  nn::init_gaussian(params_, layout_.head, rng);
  params_.add(kStateNorm + ".mean", Matrix<float>::Zero(1, spec.state_dim()));
  params_.add(kStateNorm + ".std", Matrix<float>::Ones(1, spec.state_dim()));
}

void DirectModel::fit_normalizers(const Dataset& train) {
  const TransitionBatch b = make_batch(train);
  Matrix<float> states(2 * b.rows(), b.state.cols());
  states << b.state, b.next_state;
  nn::fit_normalizer(params_, kStateNorm, states);
}

namespace {

template <class T>
nn::GaussianOut direct_forward(Tape<T>& tape, const DirectModelLayout& layout, const Matrix<T>& state,
                               const Matrix<float>& joint_actions) {
  Var hs = nn::apply_mlp(tape, layout.state_encoder, tape.constant(state));
  Var ha = nn::apply_mlp(tape, layout.action_encoder, tape.constant(joint_actions.template cast<T>()));
  return nn::apply_gaussian(tape, layout.head, tape.concat({hs, ha}));
}

Matrix<float> joint(const std::vector<Matrix<float>>& actions) {
  Eigen::Index cols = 0;
  for (const auto& a : actions) cols += a.cols();
  Matrix<float> out(actions.front().rows(), cols);
  Eigen::Index at = 0;
  for (const auto& a : actions) {
    out.middleCols(at, a.cols()) = a;
    at += a.cols();
  }
  return out;
}

bool direct_trainable(const std::string& name) { return name.rfind("norm.", 0) != 0; }

}  // namespace

Matrix<float> DirectModel::predict(const Matrix<float>& state, const std::vector<Matrix<float>>& actions) const {
  Tape<float> tape(params_, [](const std::string&) { return false; });
  const nn::GaussianOut g = direct_forward(tape, layout_, nn::normalize(params_, kStateNorm, state), joint(actions));
  return nn::denormalize(params_, kStateNorm, tape.value(g.mean));
}

template <class T>
Var direct_loss(Tape<T>& tape, const DirectModelLayout& layout, const ad::ParamStore<T>& params,
                const TransitionBatch& batch) {
  const nn::GaussianOut g = direct_forward(tape, layout, nn::normalize(params, kStateNorm, batch.state),
                                           batch.joint_actions());
  Var target = tape.constant(nn::normalize(params, kStateNorm, batch.next_state));
  return tape.mean(tape.gaussian_nll(target, g.mean, g.log_std));
}

double direct_state_mse(const DirectModel& model, const Dataset& data) {
  if (data.empty()) throw std::invalid_argument("direct_state_mse on an empty dataset");
  const TransitionBatch b = make_batch(data);
  const Matrix<float> pred = model.predict(b.state, b.actions);
  return (pred - b.next_state).cast<double>().array().square().sum() /
         static_cast<double>(b.next_state.size());
}

DirectBaselineResult direct_state_baseline(const Dataset& train, const Dataset& heldout, const WorldModelConfig& config,
                                           int width, std::uint64_t seed) {
  if (train.empty()) throw std::invalid_argument("direct baseline needs a non-empty train split");
  DirectModel model(train.spec, width, seed);
  model.fit_normalizers(train);
  std::vector<std::string> names;
  for (const auto& name : model.params().names())
    if (direct_trainable(name)) names.push_back(name);
  ad::Adam<float> adam({config.learning_rate}, names);
  Rng rng(seed, "direct-train");
  std::vector<std::size_t> indices(static_cast<std::size_t>(config.batch_size));
  for (int step = 1; step <= config.steps; ++step) {
    for (auto& k : indices) k = rng.index(train.size());
    const TransitionBatch tb = make_batch(train, indices);
    Tape<float> tape(model.params(), direct_trainable);
    Var loss = direct_loss(tape, model.layout(), model.params(), tb);
    const double value = tape.scalar(loss);
    if (!std::isfinite(value) || value > config.divergence_limit)
      throw DivergenceError("direct baseline loss " + std::to_string(value) + " at step " + std::to_string(step));
    adam.step(model.params(), tape.backward(loss));
  }
  const double mse = heldout.empty() ? 0.0 : direct_state_mse(model, heldout);
  return {std::move(model), mse};
}

EnsemblePrediction Ensemble::predict(const Matrix<float>& state, const std::vector<Matrix<float>>& actions) const {
  if (members_.empty()) throw std::logic_error("empty ensemble");
  std::vector<Matrix<float>> preds;
  for (const auto& m : members_) preds.push_back(m.predict(state, actions));
  EnsemblePrediction out;
  out.mean = Matrix<float>::Zero(state.rows(), preds.front().cols());
  for (const auto& p : preds) out.mean += p;
  out.mean /= static_cast<float>(preds.size());
  Matrix<float> var = Matrix<float>::Zero(out.mean.rows(), out.mean.cols());
  for (const auto& p : preds) var.array() += (p - out.mean).array().square();
  var /= static_cast<float>(preds.size());
  out.spread = var.rowwise().sum().cwiseSqrt();
  return out;
}

Ensemble ensemble_baseline(const Dataset& train, const Dataset& heldout, const WorldModelConfig& config, int width,
                           int k, std::uint64_t seed, bool same_seed) {
  if (k < 1) throw std::invalid_argument("ensemble needs at least one member");
  std::vector<DirectModel> members;
  for (int m = 0; m < k; ++m) {
    const std::uint64_t member_seed = same_seed ? seed : derive_seed(seed, "ensemble-member", static_cast<std::uint64_t>(m));
    members.push_back(direct_state_baseline(train, heldout, config, width, member_seed).model);
  }
  return Ensemble(std::move(members));
}

// ---------------------------------------------------------------- timing

TimingResult time_median(const std::function<void()>& fn, int repetitions) {
  if (repetitions < 1) throw std::invalid_argument("timing needs at least one repetition");
  fn();
  TimingResult out;
  for (int r = 0; r < repetitions; ++r) {
    const auto start = std::chrono::steady_clock::now();
    fn();
    const auto stop = std::chrono::steady_clock::now();
    out.seconds.push_back(std::chrono::duration<double>(stop - start).count());
  }
  std::vector<double> sorted = out.seconds;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  out.median = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
  return out;
}

TimingWorkload make_timing_workload(const Dataset& data, int trajectories, int steps, std::uint64_t seed) {
  if (data.empty()) throw std::invalid_argument("timing workload needs data");
  Rng rng(seed, "timing-workload");
  std::vector<std::size_t> starts(static_cast<std::size_t>(trajectories));
  for (auto& k : starts) k = rng.index(data.size());
  TimingWorkload w;
  w.start = model_input(make_batch(data, starts));
  for (int t = 0; t < steps; ++t) {
    std::vector<Matrix<float>> per_agent;
    for (int i = 0; i < data.spec.n_agents; ++i) {
      Matrix<float> a(trajectories, data.spec.action_dim());
      for (Eigen::Index k = 0; k < a.size(); ++k) a.data()[k] = static_cast<float>(rng.uniform(-1.0, 1.0));
      per_agent.push_back(std::move(a));
    }
    w.actions.push_back(std::move(per_agent));
  }
  return w;
}

void run_logo_workload(const WorldModel& model, const TimingWorkload& w) {
  ModelInput input = w.start;
  for (const auto& actions : w.actions) {
    input.actions = actions;
    Prediction p = predict_next(model, input, false);
    input.state = std::move(p.next_state);
    input.obs = std::move(p.next_obs);
  }
}

void run_ensemble_workload(const Ensemble& ensemble, const TimingWorkload& w) {
  Matrix<float> state = w.start.state;
  for (const auto& actions : w.actions) state = ensemble.predict(state, actions).mean;
}

// ---------------------------------------------------------------- PCA

PcaResult pca_project(const Matrix<double>& points, int k, double tol, int max_iterations) {
  const Eigen::Index n = points.rows();
  const Eigen::Index d = points.cols();
  if (k < 1 || k > d) throw std::invalid_argument("PCA needs 1 <= k <= dimension");
  if (n < k + 1) throw std::invalid_argument("PCA needs at least k + 1 points");
  Matrix<double> centred = points;
  centred.rowwise() -= points.colwise().mean();
  Eigen::MatrixXd cov = (centred.transpose() * centred) / static_cast<double>(n);
  const double trace = cov.trace();

  PcaResult out;
  std::vector<Eigen::VectorXd> found;
  std::vector<double> eigenvalues;
  for (int c = 0; c < k; ++c) {
    Eigen::VectorXd v(d);
    for (Eigen::Index j = 0; j < d; ++j) v[j] = 1.0 + 0.1 * static_cast<double>((j * 7 + c * 3) % 11);
    for (const auto& u : found) v -= u.dot(v) * u;
    if (v.norm() == 0.0) v = Eigen::VectorXd::Unit(d, c);
    v.normalize();
    for (int it = 0; it < max_iterations; ++it) {
      Eigen::VectorXd w = cov * v;
      for (const auto& u : found) w -= u.dot(w) * u;
      const double norm = w.norm();
      if (norm == 0.0) break;
      w /= norm;
      if (w.dot(v) < 0.0) w = -w;
      const double change = (w - v).norm();
      v = w;
      if (change < tol) break;
    }
    const double lambda = v.dot(cov * v);
    if (!(trace > 0.0) || lambda <= 1e-12 * trace) {
      out.rank_deficient = true;
      break;
    }
    // Sign convention: largest-magnitude coordinate positive.
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0.0) v = -v;
    found.push_back(v);
    eigenvalues.push_back(lambda);
    cov -= lambda * v * v.transpose();
  }
  out.components.resize(static_cast<Eigen::Index>(found.size()), d);
  for (std::size_t c = 0; c < found.size(); ++c) {
    out.components.row(static_cast<Eigen::Index>(c)) = found[c].transpose();
    out.explained_ratio.push_back(eigenvalues[c] / trace);
  }
  out.projected = centred * out.components.transpose();
  return out;
}

void write_pca_csv(const std::filesystem::path& path, const PcaResult& pca, const std::vector<std::string>& labels) {
  if (!labels.empty() && static_cast<Eigen::Index>(labels.size()) != pca.projected.rows())
    throw std::invalid_argument("one label per projected point expected");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  std::vector<std::string> header{"label"};
  for (Eigen::Index c = 0; c < pca.projected.cols(); ++c) header.push_back("pc" + std::to_string(c + 1));
  out << csv::row(header);
  std::vector<std::string> ratio{"explained_variance_ratio"};
  for (double r : pca.explained_ratio) ratio.push_back(csv::num(r));
  out << csv::row(ratio);
  for (Eigen::Index r = 0; r < pca.projected.rows(); ++r) {
    std::vector<std::string> row{labels.empty() ? std::to_string(r) : labels[static_cast<std::size_t>(r)]};
    for (Eigen::Index c = 0; c < pca.projected.cols(); ++c) row.push_back(csv::num(pca.projected(r, c)));
    out << csv::row(row);
  }
}

template Var direct_loss<float>(Tape<float>&, const DirectModelLayout&, const ad::ParamStore<float>&,
                                const TransitionBatch&);
template Var direct_loss<double>(Tape<double>&, const DirectModelLayout&, const ad::ParamStore<double>&,
                                 const TransitionBatch&);

}  // namespace logo
