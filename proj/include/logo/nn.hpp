#pragma once

#include "logo/autodiff.hpp"
#include "logo/rng.hpp"

#include <string>
#include <vector>

namespace logo::nn {

enum class Activation { Tanh, Relu };

/// Fully connected stack; `sizes` lists input, hidden and output widths.
/// Parameters are "<prefix>.l<k>.w" [in,out] and "<prefix>.l<k>.b" [1,out].
struct MlpSpec {
  std::string prefix;
  std::vector<int> sizes;
  bool activate_output = false;
  Activation activation = Activation::Tanh;

  int in_dim() const { return sizes.front(); }
  int out_dim() const { return sizes.back(); }
  std::size_t parameter_count() const;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
void init_mlp(ad::ParamStore<float>& params, const MlpSpec& spec, Rng& rng);

template <class T>
ad::Var apply_mlp(ad::Tape<T>& tape, const MlpSpec& spec, ad::Var x);

/// Network producing a diagonal Gaussian: mean from the MLP, a learned
/// per-dimension log-std "<prefix>.log_std" clamped to [kMinLogStd, kMaxLogStd].
struct GaussianHead {
  MlpSpec body;

  std::string log_std_name() const { return body.prefix + ".log_std"; }
  std::size_t parameter_count() const { return body.parameter_count() + body.sizes.back(); }
};

inline constexpr double kMinLogStd = -5.0;
inline constexpr double kMaxLogStd = 2.0;

struct GaussianOut {
  ad::Var mean;
  ad::Var log_std;
};

void init_gaussian(ad::ParamStore<float>& params, const GaussianHead& head, Rng& rng);

template <class T>
GaussianOut apply_gaussian(ad::Tape<T>& tape, const GaussianHead& head, ad::Var x);

/// Per-feature standardisation stored as "<name>.mean" / "<name>.std" rows.
void fit_normalizer(ad::ParamStore<float>& params, const std::string& name,
                    const ad::Matrix<float>& rows);

template <class T>
ad::Matrix<T> normalize(const ad::ParamStore<T>& params, const std::string& name,
                        const ad::Matrix<float>& x);
template <class T>
ad::Matrix<float> denormalize(const ad::ParamStore<T>& params, const std::string& name,
                              const ad::Matrix<T>& z);

}  // namespace logo::nn
