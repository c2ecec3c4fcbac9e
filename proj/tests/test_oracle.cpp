#include "doctest.h"

#include "logo/oracle.hpp"
#include "logo/rng.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>

using namespace logo;
using ad::Matrix;

namespace {

TabularMDP single_state(double reward, double gamma) {
  TabularMDP m;
  m.num_states = 1;
  m.num_actions = 1;
  m.gamma = gamma;
  m.transition = {1.0};
  m.reward = {reward};
  return m;
}

const Dataset& data() {
  static const Dataset d = collect(EnvSpec{}, BehaviorSpec{Provenance::Medium}, 12, 8);
  return d;
}

}  // namespace

TEST_CASE("value iteration on a geometric series") {
  const QTable q = value_iteration(single_state(1.0, 0.9), 1e-9);
  CHECK(std::abs(q.at(0, 0) - 10.0) < 1e-9);
  CHECK(q.residual < 1e-9);
}

TEST_CASE("undiscounted value iteration returns the reward table") {
  TabularMDP m = TabularMDP::random(5, 3, 0.0, 2);
  const QTable q = value_iteration(m, 1e-9);
  CHECK(q.values == m.reward);
}

TEST_CASE("value iteration agrees with a tighter rerun") {
  const TabularMDP m = TabularMDP::random(8, 4, 0.9, 6);
  const double tol = 1e-6;
  const QTable a = value_iteration(m, tol);
  const QTable b = value_iteration(m, tol / 10);
  CHECK(a.residual < tol);
  for (std::size_t k = 0; k < a.values.size(); ++k) CHECK(std::abs(a.values[k] - b.values[k]) < 10 * tol);
  const auto again = bellman_backup(m, b.values);
  for (std::size_t k = 0; k < again.size(); ++k) CHECK(std::abs(again[k] - b.values[k]) < tol);
}

TEST_CASE("chain values are discounted arrivals") {
  const TabularMDP m = TabularMDP::chain(5, 0.5);
  const QTable q = value_iteration(m, 1e-12);
  // From the right end, stepping right keeps collecting 1.
  CHECK(q.at(4, 1) == doctest::Approx(2.0));
  CHECK(q.at(3, 1) == doctest::Approx(2.0));
  CHECK(q.at(2, 1) == doctest::Approx(1.0));
  CHECK(q.at(0, 1) == doctest::Approx(0.25));
}

TEST_CASE("theorem bound arithmetic") {
  CHECK(theorem1_bound(1.0, 10.0, 0.9, {0.1, 0.05, 0.02}) == doctest::Approx(1.068));
}

TEST_CASE("no perturbation means no error") {
  const TabularMDP m = TabularMDP::random(16, 4, 0.9, 1);
  const Theorem1Report r = theorem1_check(m, {0.0, 0.0, 0.0}, 50, 3);
  CHECK(r.bound == 0.0);
  CHECK(r.max_error < 1e-9);
  CHECK(r.pass());
}

TEST_CASE("randomised injections stay inside the bound") {
  const TabularMDP m = TabularMDP::random(16, 4, 0.9, 11);
  const Theorem1Report r = theorem1_check(m, {0.3, 0.1, 0.05}, 1000, 5);
  CHECK(r.trials == 1000);
  CHECK(r.violations == 0);
  CHECK(r.max_error <= r.bound);
  CHECK(r.max_error > 0.0);
}

TEST_CASE("direct width matches the budget") {
  const EnvSpec spec;
  const WorldModelLayout wm(spec, 32);
  const int w = direct_width_for_budget(spec, wm.inference_parameter_count());
  const auto count = [&](int h) { return static_cast<double>(DirectModelLayout(spec, h).inference_parameter_count()); };
  const double budget = static_cast<double>(wm.inference_parameter_count());
  CHECK(std::abs(count(w) - budget) <= std::abs(count(w + 1) - budget));
  CHECK(std::abs(count(w) - budget) <= std::abs(count(w - 1) - budget));
}

TEST_CASE("direct baseline with no training equals the initial model") {
  const auto [train, val] = split(data(), 0.25, 0);
  WorldModelConfig c;
  c.steps = 0;
  const DirectBaselineResult r = direct_state_baseline(train, val, c, 8, 3);
  DirectModel init(EnvSpec{}, 8, 3);
  init.fit_normalizers(train);
  CHECK(r.heldout_mse == direct_state_mse(init, val));
  const DirectBaselineResult again = direct_state_baseline(train, val, c, 8, 3);
  CHECK(again.heldout_mse == r.heldout_mse);
}

TEST_CASE("direct baseline training is deterministic and helps") {
  const auto [train, val] = split(data(), 0.25, 0);
  WorldModelConfig c;
  c.steps = 200;
  c.hidden = 16;
  const DirectBaselineResult a = direct_state_baseline(train, val, c, 16, 4);
  const DirectBaselineResult b = direct_state_baseline(train, val, c, 16, 4);
  CHECK(a.heldout_mse == b.heldout_mse);
  DirectModel init(EnvSpec{}, 16, 4);
  init.fit_normalizers(train);
  CHECK(a.heldout_mse < direct_state_mse(init, val));
}

TEST_CASE("ensemble degenerate cases") {
  const auto [train, val] = split(data(), 0.25, 0);
  WorldModelConfig c;
  c.steps = 20;
  const TransitionBatch b = make_batch(val);
  const Ensemble same = ensemble_baseline(train, val, c, 8, 3, 9, true);
  CHECK(same.predict(b.state, b.actions).spread.cwiseAbs().maxCoeff() < 1e-6f);
  const Ensemble one = ensemble_baseline(train, val, c, 8, 1, 9);
  const EnsemblePrediction p = one.predict(b.state, b.actions);
  CHECK(p.mean == one.members()[0].predict(b.state, b.actions));
  const Ensemble five = ensemble_baseline(train, val, c, 8, 5, 9);
  CHECK(five.members().size() == 5);
  CHECK(five.predict(b.state, b.actions).spread.maxCoeff() > 0.0f);
}

TEST_CASE("timing harness") {
  int calls = 0;
  const TimingResult r = time_median([&] { ++calls; }, 5);
  CHECK(calls == 6);
  CHECK(r.seconds.size() == 5);
  const TimingWorkload w = make_timing_workload(data(), 7, 3, 1);
  CHECK(w.start.rows() == 7);
  CHECK(w.actions.size() == 3);
}

TEST_CASE("pca of collinear points") {
  Matrix<double> pts(20, 3);
  for (int r = 0; r < 20; ++r) pts.row(r) << r, 2.0 * r, -r;
  const PcaResult p = pca_project(pts, 2);
  CHECK(p.explained_ratio[0] == doctest::Approx(1.0));
  CHECK(p.rank_deficient);
}

TEST_CASE("pca of square corners splits evenly") {
  Matrix<double> pts(4, 2);
  pts << 0, 0, 1, 0, 0, 1, 1, 1;
  const PcaResult p = pca_project(pts, 2);
  CHECK(p.explained_ratio[0] == doctest::Approx(0.5));
  CHECK(p.explained_ratio[1] == doctest::Approx(0.5));
}

TEST_CASE("pca matches a dense eigensolver") {
  Rng rng(21, "pca");
  Matrix<double> pts(50, 8);
  for (Eigen::Index k = 0; k < pts.size(); ++k) pts.data()[k] = rng.normal();
  for (int r = 0; r < 50; ++r) pts(r, 1) += 2.0 * pts(r, 0);
  const PcaResult p = pca_project(pts, 2);
  const Matrix<double> centred = pts.rowwise() - pts.colwise().mean();
  const Eigen::MatrixXd cov = (centred.transpose() * centred) / 50.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  for (int c = 0; c < 2; ++c) {
    const Eigen::VectorXd v = es.eigenvectors().col(7 - c);
    const Eigen::VectorXd proj = centred * v;
    const Eigen::VectorXd got = p.projected.col(c);
    const double err = std::min((proj - got).cwiseAbs().maxCoeff(), (proj + got).cwiseAbs().maxCoeff());
    CHECK(err < 1e-6);
    CHECK(p.explained_ratio[static_cast<std::size_t>(c)] == doctest::Approx(es.eigenvalues()(7 - c) / cov.trace()));
  }
}
