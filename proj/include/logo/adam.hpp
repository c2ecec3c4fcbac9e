#pragma once

#include "logo/autodiff.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace logo::ad {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction over a fixed set of named parameters.
template <class T>
class Adam {
 public:
  Adam(AdamConfig config, std::vector<std::string> names);

  /// Throws std::invalid_argument if any owned parameter has no gradient.
  void step(ParamStore<T>& params, const GradMap<T>& grads);

  std::int64_t step_count() const { return steps_; }
  const AdamConfig& config() const { return config_; }
  const std::vector<std::string>& names() const { return names_; }

 private:
  AdamConfig config_;
  std::vector<std::string> names_;
  GradMap<T> first_;
  GradMap<T> second_;
  std::int64_t steps_ = 0;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace logo::ad
