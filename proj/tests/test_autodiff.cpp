#include "doctest.h"

#include "logo/adam.hpp"
#include "logo/autodiff.hpp"
#include "logo/rng.hpp"

#include <cmath>
#include <numbers>

using namespace logo;
using ad::Matrix;
using ad::Tape;
using ad::Var;

namespace {

Matrix<double> row(std::initializer_list<double> xs) {
  Matrix<double> m(1, static_cast<Eigen::Index>(xs.size()));
  Eigen::Index k = 0;
  for (double x : xs) m(0, k++) = x;
  return m;
}

Matrix<double> scalar(double x) { return Matrix<double>::Constant(1, 1, x); }

}  // namespace

TEST_CASE("square and its derivative") {
  Tape<double> t;
  Var x = t.leaf("x", scalar(3.0));
  Var y = t.mul(x, x);
  CHECK(t.scalar(y) == 9.0);
  auto g = t.backward(y);
  CHECK(g.at("x")(0, 0) == 6.0);
}

TEST_CASE("concat and its gradient") {
  Tape<double> t;
  Var x = t.leaf("x", row({1, 2}));
  Var y = t.leaf("y", row({3}));
  Var c = t.concat({x, y});
  CHECK(t.value(c) == row({1, 2, 3}));
  auto g = t.backward(t.sum(c));
  CHECK(g.at("x") == row({1, 1}));
  CHECK(g.at("y") == row({1}));
}

TEST_CASE("identity affine map") {
  Tape<double> t;
  Var x = t.constant(row({0.5, -0.5}));
  Var w = t.constant(Matrix<double>::Identity(2, 2));
  Var b = t.constant(Matrix<double>::Zero(1, 2));
  CHECK(t.value(t.affine(x, w, b)) == row({0.5, -0.5}));
}

TEST_CASE("gaussian nll at the target") {
  Tape<double> t;
  Var target = t.constant(row({0.2, -1.0, 3.0}));
  Var mean = t.leaf("mu", row({0.2, -1.0, 3.0}));
  Var log_std = t.constant(Matrix<double>::Zero(1, 3));
  Var nll = t.sum(t.gaussian_nll(target, mean, log_std));
  CHECK(t.scalar(nll) == doctest::Approx(1.5 * std::log(2.0 * std::numbers::pi)).epsilon(1e-14));
  auto g = t.backward(nll);
  CHECK(g.at("mu").cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gaussian nll matches the closed form") {
  Tape<double> t;
  const double x = 0.7, mu = -0.1, ls = 0.3;
  Var nll = t.gaussian_nll(t.constant(scalar(x)), t.constant(scalar(mu)), t.constant(scalar(ls)));
  const double sd = std::exp(ls);
  const double expected = 0.5 * ((x - mu) / sd) * ((x - mu) / sd) + ls + 0.5 * std::log(2 * std::numbers::pi);
  CHECK(t.scalar(nll) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("softmax with large logits stays finite") {
  Tape<double> t;
  Var s = t.softmax(t.constant(row({1000.0, 1000.0 + std::log(2.0)})));
  CHECK(t.value(s)(0, 0) == doctest::Approx(1.0 / 3.0));
  CHECK(t.value(s)(0, 1) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("shape mismatch names the op") {
  Tape<double> t;
  Var a = t.constant(row({1, 2}));
  Var b = t.constant(row({1, 2, 3}));
  CHECK_THROWS_AS(t.add(a, b), ad::ShapeError);
  try {
    t.add(a, b);
  } catch (const ad::ShapeError& e) {
    CHECK(std::string(e.what()).find("add") != std::string::npos);
  }
}

TEST_CASE("non-finite intermediate is rejected") {
  Tape<double> t;
  Var a = t.constant(scalar(std::numeric_limits<double>::infinity()));
  CHECK_THROWS_AS(t.scale(a, 0.0), ad::NonFiniteError);
}

TEST_CASE("backward requires a scalar") {
  Tape<double> t;
  Var x = t.leaf("x", row({1, 2}));
  CHECK_THROWS_AS(t.backward(t.tanh(x)), ad::ShapeError);
}

TEST_CASE("non-trainable leaves receive no gradient") {
  ad::ParamStore<double> p;
  p.add("a.w", scalar(2.0));
  p.add("b.w", scalar(5.0));
  Tape<double> t(p, ad::prefix_filter({"a."}));
  Var y = t.mul(t.param("a.w"), t.param("b.w"));
  auto g = t.backward(y);
  CHECK(g.count("a.w") == 1);
  CHECK(g.count("b.w") == 0);
  CHECK(g.at("a.w")(0, 0) == 5.0);
}

TEST_CASE("stop_gradient blocks the path") {
  Tape<double> t;
  Var x = t.leaf("x", scalar(2.0));
  Var y = t.add(t.mul(x, x), t.mul(t.stop_gradient(x), t.stop_gradient(x)));
  CHECK(t.scalar(y) == 8.0);
  CHECK(t.backward(y).at("x")(0, 0) == 4.0);
}

TEST_CASE("backward is bitwise deterministic") {
  ad::ParamStore<double> p;
  Rng rng(7, "test");
  Matrix<double> w(3, 4), x(5, 3);
  for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = rng.normal();
  for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = rng.normal();
  p.add("w", w);
  p.add("b", Matrix<double>::Zero(1, 4));
  auto run = [&] {
    Tape<double> t(p);
    Var h = t.tanh(t.affine(t.constant(x), t.param("w"), t.param("b")));
    return t.backward(t.mean(t.squared_norm(h)));
  };
  const auto a = run(), b = run();
  CHECK(a.at("w") == b.at("w"));
  CHECK(a.at("b") == b.at("b"));
}

TEST_CASE("finite difference check on simple functions") {
  ad::ParamStore<double> p;
  p.add("x", scalar(3.0));
  auto quad = ad::finite_diff_check(p, [](Tape<double>& t) { Var x = t.param("x"); return t.mul(x, x); }, 1e-4);
  CHECK(quad.max_relative_error < 1e-6);
  auto lin = ad::finite_diff_check(p, [](Tape<double>& t) { return t.scale(t.param("x"), 3.0); }, 1e-4);
  CHECK(lin.max_relative_error < 1e-8);
  CHECK(lin.coordinates == 1);
}

TEST_CASE("finite difference check over every op") {
  ad::ParamStore<double> p;
  Rng rng(3, "fd-ops");
  auto rnd = [&](int r, int c) {
    Matrix<double> m(r, c);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = rng.uniform(-0.8, 0.8);
    return m;
  };
  p.add("w", rnd(3, 4));
  p.add("b", rnd(1, 4));
  p.add("ls", rnd(1, 2));
  p.add("v", rnd(4, 2));
  const Matrix<double> x = rnd(4, 3), target = rnd(4, 2), noise = rnd(4, 2);
  auto loss = [&](Tape<double>& t) {
    Var h = t.affine(t.constant(x), t.param("w"), t.param("b"));
    Var a = t.tanh(h);
    Var r = t.relu(t.add(h, t.constant(Matrix<double>::Constant(4, 4, 0.3))));
    Var m = t.slice(t.mul(a, r), 1, 2);
    Var mu = t.sub(m, t.param("v"));
    Var samp = t.gaussian_sample(mu, t.param("ls"), t.constant(noise));
    Var nll = t.mean(t.gaussian_nll(t.constant(target), mu, t.param("ls")));
    Var sm = t.sum(t.mul(t.softmax(samp), t.constant(target)));
    Var cl = t.sum(t.clip(samp, -0.5, 0.5));
    return t.add(t.add(nll, sm), t.add(cl, t.scale(t.mean(t.squared_norm(t.concat({mu, a}))), 0.5)));
  };
  CHECK(ad::finite_diff_check(p, loss, 1e-6).max_relative_error < 1e-6);
}

TEST_CASE("adam fixed point and first step") {
  ad::ParamStore<float> p;
  p.add("x", Matrix<float>::Constant(1, 1, 2.0f));
  p.add("y", Matrix<float>::Constant(1, 1, -1.0f));
  ad::Adam<float> opt({1e-3}, {"x", "y"});
  opt.step(p, {{"x", Matrix<float>::Zero(1, 1)}, {"y", Matrix<float>::Constant(1, 1, 1.0f)}});
  CHECK(p.at("x")(0, 0) == 2.0f);
  CHECK(p.at("y")(0, 0) == doctest::Approx(-1.001).epsilon(1e-6));
  CHECK(opt.step_count() == 1);
  CHECK_THROWS_AS(opt.step(p, {{"x", Matrix<float>::Zero(1, 1)}}), std::invalid_argument);
}

TEST_CASE("adam on p squared matches a direct implementation") {
  ad::ParamStore<double> p;
  p.add("p", scalar(1.0));
  ad::Adam<double> opt({0.05}, {"p"});
  double q = 1.0, m = 0.0, v = 0.0;
  for (int k = 1; k <= 100; ++k) {
    opt.step(p, {{"p", scalar(2.0 * p.at("p")(0, 0))}});
    const double g = 2.0 * q;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    q -= 0.05 * (m / (1 - std::pow(0.9, k))) / (std::sqrt(v / (1 - std::pow(0.999, k))) + 1e-8);
  }
  CHECK(std::abs(p.at("p")(0, 0)) < 0.5);
  CHECK(p.at("p")(0, 0) == doctest::Approx(q).epsilon(1e-12));
}
