#include "doctest.h"

#include "logo/synth.hpp"
#include "logo/world_model.hpp"

#include <algorithm>
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

const Dataset& toy_data() {
  static const Dataset d = collect(EnvSpec{}, BehaviorSpec{Provenance::Medium}, 20, 123);
  return d;
}

TransitionBatch toy_batch(std::size_t rows, std::size_t offset = 0) {
  std::vector<std::size_t> idx(rows);
  std::iota(idx.begin(), idx.end(), offset);
  return make_batch(toy_data(), idx);
}

WorldModel small_model(std::uint64_t seed = 1, int hidden = 8) {
  WorldModel m(EnvSpec{}, hidden, seed);
  m.fit_normalizers(toy_data());
  return m;
}

std::string bytes_of(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path temp_file(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "logo_test_wm";
  fs::create_directories(dir);
  return dir / name;
}

/// Zeroes the last layer of an MLP and sets its bias.
void set_constant_output(ad::ParamStore<float>& p, const std::string& layer, const Matrix<float>& bias) {
  p.at(layer + ".w").setZero();
  p.at(layer + ".b") = bias;
}

}  // namespace

TEST_CASE("layout parameter counts") {
  const WorldModelLayout l(EnvSpec{}, 8);
  const WorldModel m(EnvSpec{}, 8, 0);
  std::size_t trainable = 0;
  for (const auto& [name, v] : m.params().entries())
    if (WorldModel::trainable(name)) trainable += static_cast<std::size_t>(v.size());
  CHECK(l.parameter_count() == trainable);
  CHECK(l.inference_parameter_count() < l.parameter_count());
}

TEST_CASE("world loss is the exact sum of its parts") {
  const WorldModel m = small_model();
  const auto wb = normalize_batch(m.params(), m.spec(), toy_batch(16));
  Rng rng(2, "noise");
  const WorldNoise noise = draw_world_noise(m.spec(), wb.rows(), rng);
  Tape<float> t(m.params(), WorldModel::trainable);
  const WorldLosses l = loss_world(t, m.layout(), wb, noise);
  const float sum = ((t.scalar(l.predictive) + t.scalar(l.deductive)) + t.scalar(l.deduce_reg)) + t.scalar(l.uncertainty);
  CHECK(t.scalar(l.total) == sum);

  Tape<float> t2(m.params(), WorldModel::trainable);
  CHECK(t2.scalar(loss_predictive(t2, m.layout(), wb, noise)) == t.scalar(l.predictive));
  CHECK(t2.scalar(loss_deductive(t2, m.layout(), wb, noise)) == t.scalar(l.deductive));
  CHECK(t2.scalar(loss_deduce_reg(t2, m.layout(), wb, noise)) == t.scalar(l.deduce_reg));
  CHECK(t2.scalar(loss_uncertainty_head(t2, m.layout(), wb)) == t.scalar(l.uncertainty));
}

TEST_CASE("deduction regulariser stops gradients at the predicted observations") {
  const WorldModel m = small_model();
  const auto wb = normalize_batch(m.params(), m.spec(), toy_batch(16));
  Rng rng(3, "noise");
  const WorldNoise noise = draw_world_noise(m.spec(), wb.rows(), rng);
  Tape<float> t(m.params(), WorldModel::trainable);
  const auto g = t.backward(loss_deduce_reg(t, m.layout(), wb, noise));
  bool decoder_moves = false;
  for (const auto& [name, grad] : g) {
    if (name.rfind("deduce.dec", 0) == 0)
      decoder_moves = decoder_moves || grad.cwiseAbs().maxCoeff() > 0.0f;
    else
      CHECK_MESSAGE(grad.cwiseAbs().maxCoeff() == 0.0f, name);
  }
  CHECK(decoder_moves);
}

TEST_CASE("deduction regulariser equals the explicit composition") {
  const WorldModel m = small_model();
  const auto pd = m.params().cast<double>();
  const auto wb = normalize_batch(pd, m.spec(), toy_batch(12));
  Rng rng(4, "noise");
  const WorldNoise noise = draw_world_noise(m.spec(), wb.rows(), rng);
  const auto obs_hat = sampled_predicted_obs(pd, m.layout(), wb, noise);
  Tape<double> t(pd);
  const double lib = t.scalar(loss_deduce_reg(t, m.layout(), wb, noise));
  // Manual forward pass of R_d on the reparameterized draws.
  Matrix<double> x(wb.rows(), 0);
  Eigen::Index cols = 0;
  for (const auto& o : obs_hat) cols += o.cols();
  x.resize(wb.rows(), cols);
  Eigen::Index at = 0;
  for (const auto& o : obs_hat) {
    x.middleCols(at, o.cols()) = o;
    at += o.cols();
  }
  for (int k = 0; k < 3; ++k) {
    const std::string layer = "deduce.dec.l" + std::to_string(k);
    x = (x * pd.at(layer + ".w")).rowwise() + pd.at(layer + ".b").row(0);
    if (k < 2) x = x.array().tanh().matrix();
  }
  const double manual = (x - wb.next_state_reward).rowwise().squaredNorm().mean();
  CHECK(lib == doctest::Approx(manual).epsilon(1e-12));
}

TEST_CASE("uncertainty head loss ignores batch order") {
  const WorldModel m = small_model();
  const TransitionBatch b = toy_batch(10);
  const std::vector<std::size_t> idx{9, 3, 0, 1, 8, 2, 7, 6, 5, 4};
  const auto pd = m.params().cast<double>();
  Tape<double> ta(pd), tb(pd);
  const double a = ta.scalar(loss_uncertainty_head(ta, m.layout(), normalize_batch(pd, m.spec(), b)));
  const double c = tb.scalar(loss_uncertainty_head(tb, m.layout(), normalize_batch(pd, m.spec(), make_batch(toy_data(), idx))));
  CHECK(a == doctest::Approx(c).epsilon(1e-12));
}

TEST_CASE("deductive encoder receives gradient") {
  const WorldModel m = small_model();
  const auto wb = normalize_batch(m.params(), m.spec(), toy_batch(16));
  Rng rng(5, "noise");
  const WorldNoise noise = draw_world_noise(m.spec(), wb.rows(), rng);
  Tape<float> t(m.params(), WorldModel::trainable);
  const auto g = t.backward(loss_deductive(t, m.layout(), wb, noise));
  CHECK(g.at("deduce.enc.l0.w").cwiseAbs().maxCoeff() > 0.0f);
}

TEST_CASE("perfect heads leave only the Gaussian constant") {
  // Constant heads that output the (single) target exactly with log-std 0.
  WorldModel m = small_model();
  const TransitionBatch b = toy_batch(1, 7);
  auto& p = m.params();
  const auto wb = normalize_batch(p, m.spec(), b);
  for (int i = 0; i < 2; ++i) {
    const std::string a = "agent" + std::to_string(i);
    set_constant_output(p, a + ".aux_head.l2", wb.next_state_reward);
    p.at(a + ".aux_head.log_std").setZero();
  }
  Tape<float> t(p, WorldModel::trainable);
  const float nll = t.scalar(loss_uncertainty_head(t, m.layout(), wb));
  const double per_dim = 0.5 * std::log(2.0 * 3.14159265358979323846);
  CHECK(nll == doctest::Approx(per_dim * (m.spec().state_dim() + 1)).epsilon(1e-5));
}

TEST_CASE("dual-path uncertainty from hand-set heads") {
  WorldModel m(EnvSpec{}, 8, 0);  // identity normalizers
  auto& p = m.params();
  const int sd = m.spec().state_dim();
  const TransitionBatch b = toy_batch(4);
  SUBCASE("both paths agree") {
    Matrix<float> bias = Matrix<float>::Constant(1, sd + 1, 0.3f);
    set_constant_output(p, "deduce.dec.l2", bias);
    set_constant_output(p, "agent0.aux_head.l2", bias);
    set_constant_output(p, "agent1.aux_head.l2", bias);
    const Prediction pr = predict_next(m, model_input(b));
    CHECK(pr.uncertainty.cwiseAbs().maxCoeff() == 0.0f);
  }
  SUBCASE("unit offset") {
    Matrix<float> e1 = Matrix<float>::Zero(1, sd + 1);
    e1(0, 0) = 1.0f;
    set_constant_output(p, "deduce.dec.l2", Matrix<float>::Zero(1, sd + 1));
    set_constant_output(p, "agent0.aux_head.l2", e1);
    set_constant_output(p, "agent1.aux_head.l2", e1);
    const Prediction pr = predict_next(m, model_input(b));
    for (Eigen::Index r = 0; r < pr.uncertainty.size(); ++r) CHECK(pr.uncertainty(r) == doctest::Approx(1.0f));
    CHECK(pr.next_state.isZero());
  }
}

TEST_CASE("auxiliary heads are fused by inverse variance") {
  WorldModel m(EnvSpec{}, 8, 0);
  auto& p = m.params();
  const int sd = m.spec().state_dim();
  set_constant_output(p, "agent0.aux_head.l2", Matrix<float>::Constant(1, sd + 1, 1.0f));
  set_constant_output(p, "agent1.aux_head.l2", Matrix<float>::Constant(1, sd + 1, 4.0f));
  SUBCASE("equal variances average") {
    const Prediction pr = predict_next(m, model_input(toy_batch(3)));
    CHECK(pr.aux_state.isConstant(2.5f, 1e-6f));
  }
  SUBCASE("precision weights") {
    // sigma ratio 2 gives weights 4:1 toward agent 0.
    p.at("agent1.aux_head.log_std").setConstant(std::log(2.0f));
    const Prediction pr = predict_next(m, model_input(toy_batch(3)));
    CHECK(pr.aux_state.isConstant((4.0f * 1.0f + 1.0f * 4.0f) / 5.0f, 1e-5f));
  }
  SUBCASE("log-std is clamped before weighting") {
    p.at("agent0.aux_head.log_std").setConstant(-50.0f);
    p.at("agent1.aux_head.log_std").setConstant(static_cast<float>(nn::kMinLogStd));
    const Prediction pr = predict_next(m, model_input(toy_batch(3)));
    CHECK(pr.aux_state.isConstant(2.5f, 1e-5f));
  }
}

TEST_CASE("uncertainty is the distance between the two predictions") {
  const WorldModel m = small_model(9);
  const Prediction pr = predict_next(m, model_input(toy_batch(20)));
  CHECK(pr.next_state.rows() == 20);
  CHECK(pr.reward.cols() == 1);
  CHECK(pr.next_obs.size() == 2);
  for (Eigen::Index r = 0; r < 20; ++r)
    CHECK(pr.uncertainty(r) == doctest::Approx((pr.aux_state.row(r) - pr.next_state.row(r)).norm()));
}

TEST_CASE("zero training steps return the initial model") {
  const auto [train, val] = split(toy_data(), 0.2, 0);
  WorldModelConfig c;
  c.hidden = 8;
  c.steps = 0;
  c.seed = 4;
  const WorldModelTrainResult r = train_world_model(train, val, c);
  CHECK(r.log.empty());
  WorldModel fresh(EnvSpec{}, 8, derive_seed(4, "world-model"));
  fresh.fit_normalizers(train);
  for (const auto& [name, v] : fresh.params().entries()) CHECK(r.model.params().at(name) == v);
  CHECK(r.clip_constant > 0.0);
}

TEST_CASE("training lowers validation error and is deterministic") {
  const Dataset d = collect(EnvSpec{}, BehaviorSpec{Provenance::Medium}, 20, 5);
  const auto [train, val] = split(d, 0.2, 1);
  WorldModelConfig c;
  c.hidden = 32;
  c.steps = 600;
  c.validate_every = 100;
  c.seed = 3;
  const WorldModelTrainResult a = train_world_model(train, val, c);
  WorldModel init(EnvSpec{}, 32, derive_seed(3, "world-model"));
  init.fit_normalizers(train);
  CHECK(one_step_state_mse(a.model, val) < one_step_state_mse(init, val));
  CHECK(a.log.size() == 600);
  int windows = 0, falling = 0;
  for (std::size_t w = 0; w + 20 <= a.log.size(); w += 10, ++windows) {
    auto total = [&](std::size_t k) { return a.log[k].predictive; };
    double first = 0, second = 0;
    for (std::size_t k = w; k < w + 10; ++k) first += total(k);
    for (std::size_t k = w + 10; k < w + 20; ++k) second += total(k);
    falling += second < first;
  }
  CHECK(falling > windows / 2);

  const WorldModelTrainResult b = train_world_model(train, val, c);
  a.model.save(temp_file("a.logo"));
  b.model.save(temp_file("b.logo"));
  CHECK(bytes_of(temp_file("a.logo")) == bytes_of(temp_file("b.logo")));
  CHECK(a.clip_constant == b.clip_constant);
  // C reproduces from the logged uncertainties.
  const Calibration cal = calibrate_C(a.model, val);
  CHECK(cal.clip_constant == a.clip_constant);
  CHECK(cal.clip_constant == calibrate_clip_constant(cal.uncertainties));
}

TEST_CASE("checkpoint round trip") {
  const WorldModel m = small_model(2);
  m.save(temp_file("m.logo"));
  const WorldModel back = WorldModel::load(temp_file("m.logo"));
  CHECK(back.layout().hidden == m.layout().hidden);
  for (const auto& [name, v] : m.params().entries()) CHECK(back.params().at(name) == v);
  back.save(temp_file("m2.logo"));
  CHECK(bytes_of(temp_file("m.logo")) == bytes_of(temp_file("m2.logo")));
}

TEST_CASE("divergence aborts training") {
  const auto [train, val] = split(toy_data(), 0.2, 0);
  WorldModelConfig c;
  c.hidden = 8;
  c.steps = 10;
  c.divergence_limit = 1e-3;
  CHECK_THROWS_AS(train_world_model(train, val, c), DivergenceError);
}
