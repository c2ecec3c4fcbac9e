#include "logo/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace logo::nn {

std::size_t MlpSpec::parameter_count() const {
  std::size_t total = 0;
  for (std::size_t k = 0; k + 1 < sizes.size(); ++k)
    total += static_cast<std::size_t>(sizes[k] * sizes[k + 1] + sizes[k + 1]);
  return total;
}

void init_mlp(ad::ParamStore<float>& params, const MlpSpec& spec, Rng& rng) {
  if (spec.sizes.size() < 2) throw std::invalid_argument("MLP '" + spec.prefix + "' needs two sizes");
  for (std::size_t k = 0; k + 1 < spec.sizes.size(); ++k) {
    const int in = spec.sizes[k];
    const int out = spec.sizes[k + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    ad::Matrix<float> w(in, out);
    ad::Matrix<float> b(1, out);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<float>(rng.uniform(-bound, bound));
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = static_cast<float>(rng.uniform(-bound, bound));
    const std::string layer = spec.prefix + ".l" + std::to_string(k);
    params.add(layer + ".w", std::move(w));
    params.add(layer + ".b", std::move(b));
  }
}

template <class T>
ad::Var apply_mlp(ad::Tape<T>& tape, const MlpSpec& spec, ad::Var x) {
  const std::size_t layers = spec.sizes.size() - 1;
  for (std::size_t k = 0; k < layers; ++k) {
    const std::string layer = spec.prefix + ".l" + std::to_string(k);
    x = tape.affine(x, tape.param(layer + ".w"), tape.param(layer + ".b"));
    if (k + 1 < layers || spec.activate_output)
      x = spec.activation == Activation::Tanh ? tape.tanh(x) : tape.relu(x);
  }
  return x;
}

void init_gaussian(ad::ParamStore<float>& params, const GaussianHead& head, Rng& rng) {
  init_mlp(params, head.body, rng);
  params.add(head.log_std_name(), ad::Matrix<float>::Zero(1, head.body.out_dim()));
}

template <class T>
GaussianOut apply_gaussian(ad::Tape<T>& tape, const GaussianHead& head, ad::Var x) {
  GaussianOut out;
  out.mean = apply_mlp(tape, head.body, x);
  out.log_std = tape.clip(tape.param(head.log_std_name()), static_cast<T>(kMinLogStd),
                          static_cast<T>(kMaxLogStd));
  return out;
}

void fit_normalizer(ad::ParamStore<float>& params, const std::string& name,
                    const ad::Matrix<float>& rows) {
  if (rows.rows() == 0) throw std::invalid_argument("cannot fit normalizer '" + name + "' on no data");
  const Eigen::RowVectorXd mean = rows.cast<double>().colwise().mean();
  Eigen::RowVectorXd var = Eigen::RowVectorXd::Zero(rows.cols());
  for (Eigen::Index r = 0; r < rows.rows(); ++r)
    var += (rows.row(r).cast<double>() - mean).array().square().matrix();
  var /= static_cast<double>(rows.rows());
  ad::Matrix<float> m = mean.cast<float>();
  ad::Matrix<float> s(1, rows.cols());
  for (Eigen::Index c = 0; c < rows.cols(); ++c) {
    const double sd = std::sqrt(var[c]);
    s(0, c) = sd < 1e-6 ? 1.0f : static_cast<float>(sd);
  }
  params.add(name + ".mean", std::move(m));
  params.add(name + ".std", std::move(s));
}

template <class T>
ad::Matrix<T> normalize(const ad::ParamStore<T>& params, const std::string& name,
                        const ad::Matrix<float>& x) {
  const auto& mean = params.at(name + ".mean");
  const auto& sd = params.at(name + ".std");
  ad::Matrix<T> z = x.template cast<T>();
  z.rowwise() -= mean.row(0);
  z.array().rowwise() /= sd.row(0).array();
  return z;
}

template <class T>
ad::Matrix<float> denormalize(const ad::ParamStore<T>& params, const std::string& name,
                              const ad::Matrix<T>& z) {
  const auto& mean = params.at(name + ".mean");
  const auto& sd = params.at(name + ".std");
  ad::Matrix<T> x = z;
  x.array().rowwise() *= sd.row(0).array();
  x.rowwise() += mean.row(0);
  return x.template cast<float>();
}

template ad::Var apply_mlp<float>(ad::Tape<float>&, const MlpSpec&, ad::Var);
template ad::Var apply_mlp<double>(ad::Tape<double>&, const MlpSpec&, ad::Var);
template GaussianOut apply_gaussian<float>(ad::Tape<float>&, const GaussianHead&, ad::Var);
template GaussianOut apply_gaussian<double>(ad::Tape<double>&, const GaussianHead&, ad::Var);
template ad::Matrix<float> normalize<float>(const ad::ParamStore<float>&, const std::string&,
                                            const ad::Matrix<float>&);
template ad::Matrix<double> normalize<double>(const ad::ParamStore<double>&, const std::string&,
                                              const ad::Matrix<float>&);
template ad::Matrix<float> denormalize<float>(const ad::ParamStore<float>&, const std::string&,
                                              const ad::Matrix<float>&);
template ad::Matrix<float> denormalize<double>(const ad::ParamStore<double>&, const std::string&,
                                               const ad::Matrix<double>&);

}  // namespace logo::nn
