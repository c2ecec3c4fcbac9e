#include "logo/verify.hpp"

#include "logo/csv.hpp"
#include "logo/dataset.hpp"
#include "logo/oracle.hpp"
#include "logo/policy.hpp"
#include "logo/synth.hpp"
#include "logo/world_model.hpp"

#include <chrono>
#include <cmath>
#include <map>
#include <sstream>

namespace logo {

using ad::Matrix;
using ad::Tape;
using ad::Var;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

double max_grad_difference(const ad::GradMap<double>& a, const ad::GradMap<double>& b) {
  // Parameters present in only one map count as zero gradients in the other.
  double d = 0.0;
  for (const auto& [name, g] : a) {
    auto it = b.find(name);
    d = std::max(d, it == b.end() ? g.cwiseAbs().maxCoeff() : (g - it->second).cwiseAbs().maxCoeff());
  }
  for (const auto& [name, g] : b)
    if (!a.count(name)) d = std::max(d, g.cwiseAbs().maxCoeff());
  return d;
}

template <class F>
ad::GradMap<double> grads_of(ad::ParamStore<double>& params, const ad::TrainableFilter& filter, F&& loss) {
  Tape<double> tape(params, filter);
  return tape.backward(loss(tape));
}

struct LossTally {
  double worst = 0.0;
  std::string where;
  double consistency = 0.0;  // largest mismatch against the reference composition
  std::size_t coordinates = 0;
  void add(const ad::GradCheckReport& r, int point) {
    coordinates += r.coordinates;
    if (r.max_relative_error >= worst) {
      worst = r.max_relative_error;
      where = r.worst_parameter + "[" + std::to_string(r.worst_index) + "] at point " + std::to_string(point);
    }
  }
};

}  // namespace

std::vector<CheckLine> verify_gradients(std::uint64_t seed, const GradientCheckOptions& options) {
  const auto start = Clock::now();
  EnvSpec spec;
  const Dataset data = collect(spec, BehaviorSpec{Provenance::Medium}, 2, derive_seed(seed, "verify-data"));
  const std::vector<std::string> order{"L_p", "L_d", "L_Rd", "L_Eps", "L_world", "critic", "actor", "mpc_actor"};
  std::map<std::string, LossTally> tally;

  for (int point = 0; point < options.points; ++point) {
    Rng rng(seed, "verify-grad-point", static_cast<std::uint64_t>(point));
    std::vector<std::size_t> idx(static_cast<std::size_t>(options.batch));
    for (auto& k : idx) k = rng.index(data.size());
    const TransitionBatch tb = make_batch(data, idx);

    // World-model losses.
    WorldModel wm(spec, options.hidden, derive_seed(seed, "verify-wm", static_cast<std::uint64_t>(point)));
    wm.fit_normalizers(data);
    ad::ParamStore<double> wp = wm.params().cast<double>();
    for (auto& [name, m] : wp.entries())
      if (name.size() > 8 && name.ends_with(".log_std"))
        for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = rng.uniform(-1.0, 1.0);
    const WorldModelLayout& layout = wm.layout();
    const WorldBatch<double> wb = normalize_batch(wp, spec, tb);
    const WorldNoise noise = draw_world_noise(spec, wb.rows(), rng);
    const std::vector<Matrix<double>> frozen = sampled_predicted_obs(wp, layout, wb, noise);
    const ad::TrainableFilter wf = WorldModel::trainable;

    auto l_p = [&](Tape<double>& t) { return loss_predictive(t, layout, wb, noise); };
    auto l_d = [&](Tape<double>& t) { return loss_deductive(t, layout, wb, noise); };
    auto l_rd = [&](Tape<double>& t) { return loss_deduce_reg_given(t, layout, wb, frozen); };
    auto l_eps = [&](Tape<double>& t) { return loss_uncertainty_head(t, layout, wb); };
    // L_world with the stop-gradient branch written out as a constant.
    auto l_world = [&](Tape<double>& t) {
      return t.add(t.add(t.add(l_p(t), l_d(t)), l_rd(t)), l_eps(t));
    };
    tally["L_p"].add(ad::finite_diff_check(wp, l_p, options.step, wf), point);
    tally["L_d"].add(ad::finite_diff_check(wp, l_d, options.step, wf), point);
    tally["L_Rd"].add(ad::finite_diff_check(wp, l_rd, options.step, wf), point);
    tally["L_Eps"].add(ad::finite_diff_check(wp, l_eps, options.step, wf), point);
    tally["L_world"].add(ad::finite_diff_check(wp, l_world, options.step, wf), point);

    // The library's own compositions must agree with the checked surrogates.
    const auto rd_lib = grads_of(wp, wf, [&](Tape<double>& t) { return loss_deduce_reg(t, layout, wb, noise); });
    const auto rd_ref = grads_of(wp, wf, l_rd);
    tally["L_Rd"].consistency = std::max(tally["L_Rd"].consistency, max_grad_difference(rd_lib, rd_ref));
    const auto world_lib = grads_of(wp, wf, [&](Tape<double>& t) { return loss_world(t, layout, wb, noise).total; });
    const auto world_ref = grads_of(wp, wf, l_world);
    tally["L_world"].consistency = std::max(tally["L_world"].consistency, max_grad_difference(world_lib, world_ref));

    // Policy losses.
    PolicyBundle bundle(spec, options.hidden, PolicyHyper{}, derive_seed(seed, "verify-policy", static_cast<std::uint64_t>(point)));
    bundle.fit_normalizers(data);
    ad::ParamStore<double> pp = bundle.params().cast<double>();
    for (auto& [name, m] : pp.entries())
      if (name.starts_with("q_target."))
        for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] += rng.uniform(-0.1, 0.1);
    const PolicyLayout& pl = bundle.layout();
    const PolicyBatch<double> pb = normalize_policy_batch(pp, spec, tb);
    const Matrix<double> targets = bellman_target(pp, pl, pb, 0.99);
    std::vector<Matrix<double>> a_max;
    for (int i = 0; i < spec.n_agents; ++i) {
      Matrix<double> a(pb.rows(), spec.action_dim());
      for (Eigen::Index k = 0; k < a.size(); ++k) a.data()[k] = rng.uniform(-1.0, 1.0);
      a_max.push_back(std::move(a));
    }
    const double lambda = rng.uniform(0.1, 2.0);
    tally["critic"].add(ad::finite_diff_check(pp, [&](Tape<double>& t) { return cql_q_loss(t, pl, pb, targets, 1.0); },
                                              options.step, is_critic_param),
                        point);
    tally["actor"].add(ad::finite_diff_check(pp, [&](Tape<double>& t) { return policy_loss(t, pl, pb, lambda); },
                                             options.step, is_actor_param),
                       point);
    tally["mpc_actor"].add(
        ad::finite_diff_check(pp, [&](Tape<double>& t) { return mpc_policy_loss(t, pl, pb, lambda, a_max); },
                              options.step, is_actor_param),
        point);
  }

  const double elapsed = seconds_since(start);
  std::vector<CheckLine> out;
  for (const auto& name : order) {
    const LossTally& t = tally[name];
    CheckLine line;
    line.name = "gradient " + name;
    line.pass = t.worst <= options.threshold && t.consistency <= 1e-10 && t.coordinates > 0;
    std::ostringstream d;
    d << "max_rel_err=" << csv::num(t.worst) << " coords=" << t.coordinates << " worst=" << t.where;
    if (name == "L_Rd" || name == "L_world") d << " composition_mismatch=" << csv::num(t.consistency);
    line.detail = d.str();
    line.seconds = elapsed / static_cast<double>(order.size());
    out.push_back(line);
  }
  return out;
}

CheckLine verify_theorem1(std::uint64_t seed, int trials) {
  const auto start = Clock::now();
  const TabularMDP mdp = TabularMDP::random(16, 4, 0.9, derive_seed(seed, "verify-theorem1-mdp"));
  Rng rng(seed, "verify-theorem1-eps");
  ErrorInjection inj{rng.uniform(0.0, 0.5), rng.uniform(0.0, 0.2), rng.uniform(0.0, 0.2)};
  const Theorem1Report r = theorem1_check(mdp, inj, trials, derive_seed(seed, "verify-theorem1"));
  CheckLine line;
  line.name = "theorem1 bound";
  line.pass = r.pass() && r.trials == trials;
  line.detail = "trials=" + std::to_string(r.trials) + " violations=" + std::to_string(r.violations) +
                " max_error=" + csv::num(r.max_error) + " bound=" + csv::num(r.bound) +
                " L_r=" + csv::num(r.lipschitz_r) + " L_Q=" + csv::num(r.lipschitz_q);
  line.seconds = seconds_since(start);
  return line;
}

std::vector<CheckLine> verify_sampling(std::uint64_t seed, int draws, double tolerance) {
  const auto start = Clock::now();
  EnvSpec spec;
  const Dataset data = collect(spec, BehaviorSpec{Provenance::Medium}, 2, derive_seed(seed, "verify-sampling-data"));
  Rng prng(seed, "verify-sampling-priorities");
  std::vector<Transition> items;
  for (std::size_t k = 0; k < 40; ++k) {
    Transition t = data.transitions[k % data.size()];
    t.priority = static_cast<float>(prng.uniform(0.0, 1.0));
    t.uncertainty = 0.0f;
    t.source = Provenance::Synthetic;
    items.push_back(std::move(t));
  }
  SyntheticBuffer buffer(spec);
  buffer.replace(std::move(items));

  const int batch = 64;
  std::vector<double> synth_counts(buffer.size(), 0.0);
  std::vector<double> real_counts(data.size(), 0.0);
  Rng rng(seed, "verify-sampling-draws");
  long synth_total = 0, real_total = 0;
  while (synth_total < draws) {
    const MixedBatch mb = mixed_minibatch(data, buffer, batch, rng);
    for (auto j : mb.synthetic_indices) synth_counts[j] += 1.0;
    for (auto j : mb.real_indices) real_counts[j] += 1.0;
    synth_total += static_cast<long>(mb.synthetic_indices.size());
    real_total += static_cast<long>(mb.real_indices.size());
  }
  const std::vector<double>& w = buffer.weights();
  double l1_synth = 0.0, l1_real = 0.0;
  for (std::size_t j = 0; j < w.size(); ++j) l1_synth += std::abs(synth_counts[j] / synth_total - w[j]);
  for (double c : real_counts) l1_real += std::abs(c / real_total - 1.0 / static_cast<double>(data.size()));
  const double elapsed = seconds_since(start);

  CheckLine s{"sampling synthetic-half", l1_synth < tolerance,
              "L1=" + csv::num(l1_synth) + " draws=" + std::to_string(synth_total) + " buffer=" +
                  std::to_string(buffer.size()),
              elapsed};
  CheckLine r{"sampling real-half", l1_real < tolerance,
              "L1=" + csv::num(l1_real) + " draws=" + std::to_string(real_total) + " dataset=" +
                  std::to_string(data.size()),
              elapsed};
  return {s, r};
}

std::vector<CheckLine> run_verify(std::uint64_t seed) {
  std::vector<CheckLine> out = verify_gradients(seed);
  out.push_back(verify_theorem1(seed));
  for (auto& l : verify_sampling(seed)) out.push_back(std::move(l));
  return out;
}

std::string format_check(const CheckLine& line) {
  return std::string(line.pass ? "PASS" : "FAIL") + " " + line.name + " (" + line.detail + ", " +
         csv::num(line.seconds) + "s)";
}

}  // namespace logo
