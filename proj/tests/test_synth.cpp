#include "doctest.h"

#include "logo/stats.hpp"
#include "logo/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace logo;
using ad::Matrix;

namespace {

const Dataset& data() {
  static const Dataset d = collect(EnvSpec{}, BehaviorSpec{Provenance::Medium}, 8, 31);
  return d;
}

const WorldModel& model() {
  static const WorldModel m = [] {
    const auto [train, val] = split(data(), 0.25, 0);
    WorldModelConfig c;
    c.hidden = 16;
    c.steps = 150;
    c.seed = 2;
    return train_world_model(train, val, c).model;
  }();
  return m;
}

BatchActor zero_actor() {
  return [](const std::vector<Matrix<float>>& obs) {
    std::vector<Matrix<float>> out;
    for (const auto& o : obs) out.push_back(Matrix<float>::Zero(o.rows(), 2));
    return out;
  };
}

std::vector<Transition> with_priorities(const std::vector<double>& ps) {
  std::vector<Transition> out;
  for (std::size_t k = 0; k < ps.size(); ++k) {
    Transition t = data().transitions[k % data().size()];
    t.priority = static_cast<float>(ps[k]);
    t.uncertainty = 0.0f;
    t.source = Provenance::Synthetic;
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace

TEST_CASE("priority clipping") {
  CHECK(compute_priority(0.0, 1.0) == 1.0);
  CHECK(compute_priority(2.5, 1.0) == 0.0);
  CHECK(compute_priority(0.3, 1.0) == doctest::Approx(0.7));
  CHECK(compute_priority(-1.0, 1.0) == 1.0);
}

TEST_CASE("clip constant calibration") {
  const std::vector<double> same(10, 0.5);
  CHECK(calibrate_clip_constant(same) == doctest::Approx(0.5));
  const std::vector<double> two{0.0, 1.0, 0.0, 1.0};
  CHECK(calibrate_clip_constant(two) == doctest::Approx(1.5));
  const std::vector<double> zeros(3, 0.0);
  CHECK(calibrate_clip_constant(zeros) > 0.0);
  CHECK_THROWS(calibrate_clip_constant(std::vector<double>{}));
  CHECK_THROWS(calibrate_C(model(), Dataset{}));
}

TEST_CASE("softmax weights") {
  const std::vector<double> c3{0.7, 0.7, 0.7};
  for (double w : softmax_weights(c3)) CHECK(w == doctest::Approx(1.0 / 3.0));
  const std::vector<double> ln2{std::log(2.0), 0.0};
  const auto w = softmax_weights(ln2);
  CHECK(w[0] == doctest::Approx(2.0 / 3.0));
  CHECK(w[1] == doctest::Approx(1.0 / 3.0));

  Rng rng(5, "priorities");
  std::vector<double> ps(10000);
  for (auto& p : ps) p = rng.uniform(0.0, 1.0);
  const auto got = softmax_weights(ps);
  double z = 0.0;
  for (double p : ps) z += std::exp(p);
  double total = 0.0;
  for (std::size_t k = 0; k < ps.size(); ++k) {
    CHECK(std::abs(got[k] - std::exp(ps[k]) / z) < 1e-12);
    total += got[k];
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("buffer weights follow mutations") {
  SyntheticBuffer b(EnvSpec{});
  CHECK(b.epoch() == 0);
  b.replace(with_priorities({0.0, std::log(3.0)}));
  CHECK(b.epoch() == 1);
  CHECK(b.weights()[1] == doctest::Approx(0.75));
  b.append(with_priorities({std::log(3.0)}));
  CHECK(b.weights()[0] == doctest::Approx(1.0 / 7.0));
  b.update([](Transition& t) { t.priority = 0.0f; });
  CHECK(b.weights()[2] == doctest::Approx(1.0 / 3.0));
  b.clear();
  CHECK(b.empty());
  CHECK_THROWS(b.replace(with_priorities({-1.0})));
}

TEST_CASE("rollout counts and determinism") {
  RolloutConfig c;
  c.horizon = 1;
  c.starts_per_refresh = 10;
  const SyntheticBuffer one = generate_rollouts(model(), zero_actor(), data(), c, 4);
  CHECK(one.size() == 10);
  c.horizon = 5;
  const SyntheticBuffer a = generate_rollouts(model(), zero_actor(), data(), c, 4);
  const SyntheticBuffer b = generate_rollouts(model(), zero_actor(), data(), c, 4);
  REQUIRE(a.size() == 50);
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(a.transitions()[k].next_state == b.transitions()[k].next_state);
    CHECK(a.transitions()[k].priority == b.transitions()[k].priority);
    CHECK(a.transitions()[k].source == Provenance::Synthetic);
  }
  for (const auto& t : a.transitions())
    CHECK(*t.priority == doctest::Approx(compute_priority(*t.uncertainty, c.clip_constant)));
}

TEST_CASE("rollouts chain on their own predictions") {
  RolloutConfig c;
  c.horizon = 3;
  c.starts_per_refresh = 4;
  c.action_noise = 0.5;
  const SyntheticBuffer b = generate_rollouts(model(), zero_actor(), data(), c, 9);
  const auto& ts = b.transitions();
  for (std::size_t k = 0; k + 1 < ts.size(); ++k) {
    if (ts[k].episode != ts[k + 1].episode) continue;
    CHECK(ts[k + 1].step == ts[k].step + 1);
    CHECK(ts[k + 1].state == ts[k].next_state);
    CHECK(ts[k + 1].obs == ts[k].next_obs);
  }
  for (const auto& t : ts)
    for (const auto& a : t.actions) CHECK(a.cwiseAbs().maxCoeff() <= 1.0f);
}

TEST_CASE("rollout uncertainties are finite and priorities clipped") {
  RolloutConfig c;
  c.horizon = 10;
  c.starts_per_refresh = 100;
  c.clip_constant = 0.5;
  const SyntheticBuffer b = generate_rollouts(model(), zero_actor(), data(), c, 1);
  for (const auto& t : b.transitions()) {
    REQUIRE(t.uncertainty.has_value());
    CHECK(std::isfinite(*t.uncertainty));
    CHECK(*t.uncertainty >= 0.0);
    CHECK(*t.priority == doctest::Approx(std::clamp(0.5 - *t.uncertainty, 0.0, 0.5)));
  }
}

TEST_CASE("mixed minibatch halves") {
  SyntheticBuffer b(EnvSpec{});
  b.replace(with_priorities({0.1, 0.2, 0.3}));
  const MixedBatch mb = mixed_minibatch(data(), b, 64, std::uint64_t{3});
  CHECK(mb.real_indices.size() == 32);
  CHECK(mb.synthetic_indices.size() == 32);
  CHECK(mb.batch.rows() == 64);
  CHECK_FALSE(mb.real_only);
  const MixedBatch fallback = mixed_minibatch(data(), SyntheticBuffer(EnvSpec{}), 64, std::uint64_t{3});
  CHECK(fallback.real_only);
  CHECK(fallback.real_indices.size() == 64);
  CHECK_THROWS(mixed_minibatch(data(), b, 63, std::uint64_t{3}));
}

TEST_CASE("dominant priority frequency") {
  std::vector<double> ps(20, 0.0);
  ps[7] = 5.0;
  SyntheticBuffer b(EnvSpec{});
  b.replace(with_priorities(ps));
  Rng rng(1, "dominant");
  long hits = 0, total = 0;
  while (total < 1000000) {
    for (auto j : mixed_minibatch(data(), b, 128, rng).synthetic_indices) hits += j == 7;
    total += 64;
  }
  CHECK(std::abs(static_cast<double>(hits) / total - b.weights()[7]) < 0.01);
}

TEST_CASE("uniform priorities give uniform draws") {
  SyntheticBuffer b(EnvSpec{});
  b.replace(with_priorities(std::vector<double>(10, 0.4)));
  Rng rng(2, "uniform");
  std::vector<double> counts(10, 0.0);
  long total = 0;
  while (total < 1000000) {
    for (auto j : mixed_minibatch(data(), b, 128, rng).synthetic_indices) counts[j] += 1;
    total += 64;
  }
  double l1 = 0.0;
  for (double c : counts) l1 += std::abs(c / total - 0.1);
  CHECK(l1 < 0.01);
}

TEST_CASE("reward penalty") {
  SyntheticBuffer b(EnvSpec{});
  auto items = with_priorities({0.5, 0.5});
  items[0].uncertainty = 0.0f;
  items[1].uncertainty = 0.4f;
  const float r0 = items[0].reward, r1 = items[1].reward;
  b.replace(items);
  SyntheticBuffer untouched = b;
  apply_reward_penalty(untouched, 0.0);
  CHECK(untouched.transitions()[1].reward == r1);
  apply_reward_penalty(b, 1.0);
  CHECK(b.transitions()[0].reward == r0);
  CHECK(b.transitions()[1].reward == doctest::Approx(r1 - 0.4f));
}

TEST_CASE("buffer converts to a synthetic dataset") {
  SyntheticBuffer b(EnvSpec{});
  b.replace(with_priorities({0.1, 0.9}));
  const Dataset d = buffer_to_dataset(b);
  CHECK(d.provenance == Provenance::Synthetic);
  CHECK(d.size() == 2);
  CHECK(d.transitions[1].priority == 0.9f);
}
