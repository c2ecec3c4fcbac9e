#include "logo/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace logo::ad {

template <class T>
Adam<T>::Adam(AdamConfig config, std::vector<std::string> names)
    : config_(config), names_(std::move(names)) {}

template <class T>
void Adam<T>::step(ParamStore<T>& params, const GradMap<T>& grads) {
  for (const auto& name : names_)
    if (!grads.count(name)) throw std::invalid_argument("missing gradient for '" + name + "'");

  ++steps_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const T correction1 = static_cast<T>(1.0 - std::pow(b1, static_cast<double>(steps_)));
  const T correction2 = static_cast<T>(1.0 - std::pow(b2, static_cast<double>(steps_)));
  const T lr = static_cast<T>(config_.learning_rate);
  const T eps = static_cast<T>(config_.epsilon);

  for (const auto& name : names_) {
    auto& p = params.at(name);
    const auto& g = grads.at(name);
    if (g.rows() != p.rows() || g.cols() != p.cols())
      throw ShapeError("gradient shape mismatch for '" + name + "'");
    auto& m = first_[name];
    auto& v = second_[name];
    if (m.size() == 0) {
      m = Matrix<T>::Zero(p.rows(), p.cols());
      v = Matrix<T>::Zero(p.rows(), p.cols());
    }
    m = static_cast<T>(b1) * m + static_cast<T>(1.0 - b1) * g;
    v = static_cast<T>(b2) * v + static_cast<T>(1.0 - b2) * g.cwiseProduct(g);
    p.array() -= lr * (m.array() / correction1) / ((v.array() / correction2).sqrt() + eps);
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace logo::ad
