#include "doctest.h"

#include "logo/oracle.hpp"
#include "logo/policy.hpp"
#include "logo/stats.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

using namespace logo;
using ad::Matrix;
using ad::Tape;
using ad::Var;
namespace fs = std::filesystem;

namespace {

const Dataset& data() {
  static const Dataset d = collect(EnvSpec{}, BehaviorSpec{Provenance::Medium}, 6, 77);
  return d;
}

PolicyBundle bundle(std::uint64_t seed = 1, int hidden = 8) {
  PolicyBundle b(EnvSpec{}, hidden, PolicyHyper{}, seed);
  b.fit_normalizers(data());
  return b;
}

PolicyBatch<double> batch(const ad::ParamStore<double>& p, std::size_t rows = 16) {
  std::vector<std::size_t> idx(rows);
  std::iota(idx.begin(), idx.end(), 0);
  return normalize_policy_batch(p, EnvSpec{}, make_batch(data(), idx));
}

double cosine(const ad::GradMap<double>& a, const ad::GradMap<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (const auto& [name, g] : a) {
    const auto& h = b.at(name);
    dot += (g.array() * h.array()).sum();
    na += g.squaredNorm();
    nb += h.squaredNorm();
  }
  return dot / std::sqrt(na * nb);
}

ad::GradMap<double> minus(ad::GradMap<double> a, const ad::GradMap<double>& b) {
  for (auto& [name, g] : a) g -= b.at(name);
  return a;
}

std::string bytes_of(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path temp_file(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "logo_test_policy";
  fs::create_directories(dir);
  return dir / name;
}

const WorldModel& model() {
  static const WorldModel m = [] {
    const auto [train, val] = split(data(), 0.2, 0);
    WorldModelConfig c;
    c.hidden = 8;
    c.steps = 50;
    return train_world_model(train, val, c).model;
  }();
  return m;
}

}  // namespace

TEST_CASE("terminal and undiscounted targets equal the reward") {
  const auto p = bundle().params().cast<double>();
  PolicyBatch<double> b = batch(p);
  b.done.setOnes();
  const PolicyLayout layout(EnvSpec{}, 8);
  CHECK(bellman_target(p, layout, b, 0.99) == b.reward);
  b.done.setZero();
  CHECK(bellman_target(p, layout, b, 0.0) == b.reward);
}

TEST_CASE("bellman combination reproduces the tabular backup") {
  const TabularMDP mdp = TabularMDP::random(8, 3, 0.9, 4);
  const QTable q = value_iteration(mdp, 1e-12);
  const int S = mdp.num_states, A = mdp.num_actions;
  Matrix<double> reward(S * A, 1), done = Matrix<double>::Zero(S * A, 1), next(S * A, 1);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      double ev = 0.0;
      for (int n = 0; n < S; ++n) ev += mdp.p(s, a, n) * q.state_value(n);
      reward(s * A + a, 0) = mdp.r(s, a);
      next(s * A + a, 0) = ev;
    }
  const Matrix<double> y = bellman_combine<double>(reward, done, next, mdp.gamma);
  const std::vector<double> backup = bellman_backup(mdp, q.values);
  for (int k = 0; k < S * A; ++k) {
    CHECK(y(k, 0) == doctest::Approx(backup[static_cast<std::size_t>(k)]).epsilon(1e-12));
    CHECK(std::abs(y(k, 0) - q.values[static_cast<std::size_t>(k)]) < 1e-10);
  }
}

TEST_CASE("zero alpha leaves the plain bellman error") {
  const PolicyBundle pb = bundle();
  const auto p = pb.params().cast<double>();
  const auto b = batch(p);
  const Matrix<double> y = bellman_target(p, pb.layout(), b, 0.99);
  Tape<double> t(p);
  const double loss = t.scalar(cql_q_loss(t, pb.layout(), b, y, 0.0));
  Tape<double> t2(p);
  std::vector<Var> acts;
  for (const auto& a : b.actions) acts.push_back(t2.constant(a));
  const Matrix<double> q = t2.value(q_value(t2, pb.layout().q, t2.constant(b.state), acts));
  CHECK(loss == doctest::Approx(0.5 * (q - y).squaredNorm() / static_cast<double>(q.rows())).epsilon(1e-12));
}

TEST_CASE("constant critic has no conservative penalty") {
  PolicyBundle pb = bundle();
  pb.params().at("q.l2.w").setZero();
  const auto p = pb.params().cast<double>();
  const auto b = batch(p);
  const Matrix<double> y = bellman_target(p, pb.layout(), b, 0.99);
  Tape<double> t0(p), t1(p);
  CHECK(t1.scalar(cql_q_loss(t1, pb.layout(), b, y, 1.0)) == t0.scalar(cql_q_loss(t0, pb.layout(), b, y, 0.0)));
}

TEST_CASE("behaviour cloning term vanishes on the policy's own actions") {
  const PolicyBundle pb = bundle();
  const auto p = pb.params().cast<double>();
  PolicyBatch<double> b = batch(p);
  {
    Tape<double> t(p);
    const auto pi = actor_outputs(t, pb.layout(), b.obs);
    for (std::size_t i = 0; i < pi.size(); ++i) b.actions[i] = t.value(pi[i]);
  }
  Tape<double> t0(p), t1(p);
  CHECK(t1.scalar(policy_loss(t1, pb.layout(), b, 5.0)) ==
        doctest::Approx(t0.scalar(policy_loss(t0, pb.layout(), b, 0.0))).epsilon(1e-14));
  Tape<double> t2(p), t3(p);
  CHECK(t2.scalar(mpc_policy_loss(t2, pb.layout(), b, 1.0, b.actions)) ==
        doctest::Approx(t3.scalar(policy_loss(t3, pb.layout(), b, 1.0))).epsilon(1e-14));
}

TEST_CASE("large lambda is dominated by behaviour cloning") {
  const PolicyBundle pb = bundle();
  const auto p = pb.params().cast<double>();
  const auto b = batch(p);
  auto grads = [&](const std::function<Var(Tape<double>&)>& f) {
    Tape<double> t(p, is_actor_param);
    return t.backward(f(t));
  };
  const auto big = grads([&](Tape<double>& t) { return policy_loss(t, pb.layout(), b, 1e6); });
  const auto rl = grads([&](Tape<double>& t) { return policy_loss(t, pb.layout(), b, 0.0); });
  const auto with_bc = grads([&](Tape<double>& t) { return mpc_policy_loss(t, pb.layout(), b, 0.0, b.actions); });
  CHECK(cosine(big, minus(with_bc, rl)) > 0.99);
}

TEST_CASE("mpc imitation term is non-negative") {
  const PolicyBundle pb = bundle();
  const auto p = pb.params().cast<double>();
  const auto b = batch(p);
  Rng rng(3, "targets");
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<Matrix<double>> target;
    for (int i = 0; i < 2; ++i) {
      Matrix<double> a(b.rows(), 2);
      for (Eigen::Index k = 0; k < a.size(); ++k) a.data()[k] = rng.uniform(-1, 1);
      target.push_back(a);
    }
    Tape<double> t0(p), t1(p);
    CHECK(t1.scalar(mpc_policy_loss(t1, pb.layout(), b, 1.0, target)) >= t0.scalar(policy_loss(t0, pb.layout(), b, 1.0)));
  }
}

TEST_CASE("mpc candidate selection") {
  const PolicyBundle pb = bundle();
  std::vector<std::size_t> idx(12);
  std::iota(idx.begin(), idx.end(), 0);
  const TransitionBatch tb = make_batch(data(), idx);
  const auto mean = pb.act(tb.obs);
  Rng rng(1, "mpc");
  SUBCASE("single candidate is the policy mean") {
    const MpcChoice c = mpc_select_action(pb, model(), tb.obs, tb.state, 1, rng);
    for (std::size_t i = 0; i < mean.size(); ++i) CHECK(c.actions[i] == mean[i]);
  }
  SUBCASE("ties go to the first candidate") {
    const MpcChoice c = mpc_select_action(pb, model(), tb.obs, tb.state, 4, rng, 0.0);
    for (int k : c.chosen) CHECK(k == 0);
  }
  SUBCASE("the chosen score is the best one") {
    const MpcChoice c = mpc_select_action(pb, model(), tb.obs, tb.state, 5, rng, 0.3);
    for (Eigen::Index r = 0; r < c.scores.rows(); ++r) {
      CHECK(c.scores(r, c.chosen[static_cast<std::size_t>(r)]) == c.scores.row(r).maxCoeff());
      CHECK(c.scores(r, c.chosen[static_cast<std::size_t>(r)]) >= c.scores(r, 0));
    }
  }
}

TEST_CASE("polyak update") {
  PolicyBundle pb = bundle();
  pb.params().at("q.l0.w").setConstant(1.0f);
  pb.params().at("q_target.l0.w").setConstant(0.0f);
  pb.hyper().tau = 0.25;
  pb.polyak_update();
  CHECK(pb.params().at("q_target.l0.w").isConstant(0.25f));
  CHECK(pb.params().at("q.l0.w").isConstant(1.0f));
}

TEST_CASE("zero steps leave the bundle untouched") {
  PolicyConfig c;
  c.hidden = 8;
  c.steps = 0;
  c.seed = 5;
  const PolicyTrainResult r = train_policy(data(), nullptr, c);
  PolicyBundle fresh(EnvSpec{}, 8, c.hyper, derive_seed(5, "policy"));
  fresh.fit_normalizers(data());
  CHECK(r.log.empty());
  for (const auto& [name, v] : fresh.params().entries()) CHECK(r.bundle.params().at(name) == v);
}

TEST_CASE("disabled buffer is exactly MACQL and runs are reproducible") {
  PolicyConfig c;
  c.hidden = 8;
  c.steps = 30;
  c.batch_size = 16;
  c.seed = 2;
  c.synth = SynthMode::Off;
  const PolicyTrainResult a = train_policy(data(), nullptr, c);
  const PolicyTrainResult b = train_policy(data(), &model(), c);
  for (const auto& [name, v] : a.bundle.params().entries()) CHECK(b.bundle.params().at(name) == v);
  a.bundle.save(temp_file("a.logo"));
  train_policy(data(), nullptr, c).bundle.save(temp_file("b.logo"));
  CHECK(bytes_of(temp_file("a.logo")) == bytes_of(temp_file("b.logo")));
  CHECK(a.log.size() == 30);
}

TEST_CASE("synthetic modes fill half of every batch") {
  PolicyConfig c;
  c.hidden = 8;
  c.steps = 6;
  c.batch_size = 16;
  c.refresh_every = 3;
  c.rollout.horizon = 2;
  c.rollout.starts_per_refresh = 5;
  for (SynthMode mode : {SynthMode::Weighted, SynthMode::RewardPenalty}) {
    c.synth = mode;
    const PolicyTrainResult r = train_policy(data(), &model(), c);
    for (const auto& row : r.log) {
      CHECK(row.synthetic_share == 0.5);
      CHECK(row.buffer_size == 10);
    }
  }
  c.synth = SynthMode::Weighted;
  CHECK_THROWS(train_policy(data(), nullptr, c));
}

TEST_CASE("mpc training runs") {
  PolicyConfig c;
  c.hidden = 8;
  c.steps = 3;
  c.batch_size = 8;
  c.mpc = true;
  CHECK(train_policy(data(), &model(), c).log.size() == 3);
}

TEST_CASE("checkpoint round trip") {
  const PolicyBundle pb = bundle(4);
  pb.save(temp_file("p.logo"));
  const PolicyBundle back = PolicyBundle::load(temp_file("p.logo"));
  for (const auto& [name, v] : pb.params().entries()) CHECK(back.params().at(name) == v);
  CHECK(back.hyper().tau == doctest::Approx(pb.hyper().tau));
  back.save(temp_file("p2.logo"));
  CHECK(bytes_of(temp_file("p.logo")) == bytes_of(temp_file("p2.logo")));
}

TEST_CASE("standing still pays the initial penalty every step") {
  const EnvSpec spec;
  const ParticleEnv env(spec);
  const JointActor still = [](const ParticleEnv&, const EnvState&, const JointObservation&) {
    return JointAction(2, Eigen::VectorXf::Zero(2));
  };
  const EvalResult r = evaluate_actor(spec, still, 4, 12);
  for (int e = 0; e < 4; ++e) {
    const auto [s0, o0] = env.reset(derive_seed(12, "eval-episode", static_cast<std::uint64_t>(e)));
    CHECK(r.returns[static_cast<std::size_t>(e)] == doctest::Approx(spec.episode_cap * env.reward(s0.s)).epsilon(1e-5));
  }
  const EvalResult again = evaluate_actor(spec, still, 4, 12);
  CHECK(again.returns == r.returns);
}

TEST_CASE("scripted expert matches the expert tier") {
  const EnvSpec spec;
  const JointActor expert = [](const ParticleEnv& env, const EnvState& s, const JointObservation&) {
    return expert_action(env, s.s);
  };
  const EvalResult r = evaluate_actor(spec, expert, 100, 3);
  const std::vector<double> tier = collect(spec, BehaviorSpec{Provenance::Expert}, 100, 3).episode_returns();
  const double se = std::sqrt((stats::stddev(r.returns) * stats::stddev(r.returns) + stats::stddev(tier) * stats::stddev(tier)) / 100.0);
  CHECK(std::abs(r.mean_return - stats::mean(tier)) < 4.0 * se + 0.05 * std::abs(stats::mean(tier)));
}

TEST_CASE("policy actions stay in the action box") {
  const PolicyBundle pb = bundle(6);
  std::vector<std::size_t> idx(20);
  std::iota(idx.begin(), idx.end(), 0);
  for (const auto& a : pb.act(make_batch(data(), idx).obs)) CHECK(a.cwiseAbs().maxCoeff() <= 1.0f);
}
