#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace logo::ad {

template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Named parameter matrices, ordered by name so every traversal is deterministic.
template <class T>
class ParamStore {
 public:
  void add(const std::string& name, Matrix<T> value);
  bool contains(const std::string& name) const { return values_.count(name) != 0; }
  Matrix<T>& at(const std::string& name);
  const Matrix<T>& at(const std::string& name) const;
  const std::map<std::string, Matrix<T>>& entries() const { return values_; }
  std::map<std::string, Matrix<T>>& entries() { return values_; }

  /// Total scalar count over names starting with `prefix`.
  std::size_t count(const std::string& prefix = "") const;
  std::vector<std::string> names(const std::string& prefix = "") const;

  template <class U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [name, value] : values_) out.add(name, value.template cast<U>());
    return out;
  }

 private:
  std::map<std::string, Matrix<T>> values_;
};

template <class T>
using GradMap = std::map<std::string, Matrix<T>>;

using TrainableFilter = std::function<bool(const std::string&)>;

/// Accepts names starting with any of the given prefixes.
TrainableFilter prefix_filter(std::vector<std::string> prefixes);

/// Handle to a node on a Tape.
struct Var {
  int id = -1;
};

enum class OpKind {
  Leaf,
  Constant,
  Affine,
  Add,
  Sub,
  Mul,
  Scale,
  Tanh,
  Relu,
  Concat,
  Slice,
  Sum,
  Mean,
  SquaredNorm,
  GaussianNll,
  GaussianSample,
  Softmax,
  Clip,
  StopGradient,
};

const char* op_name(OpKind kind);

/// Eager reverse-mode tape over row-major matrices.
///
/// Every op evaluates immediately and records its inputs; node ids are
/// therefore topologically ordered and backward() walks them in reverse.
/// Rank-1 arrays are represented as single-row matrices. Row-wise ops
/// (squared_norm, gaussian_nll, softmax) treat each row as one sample.
template <class T>
class Tape {
 public:
  Tape() = default;
  /// Binds parameters lazily from `store`; names rejected by `trainable`
  /// become constants. The store must outlive the tape.
  explicit Tape(const ParamStore<T>& store, TrainableFilter trainable = {});

  Var param(const std::string& name);
  Var leaf(const std::string& name, Matrix<T> value, bool trainable = true);
  Var constant(Matrix<T> value);
  Var scalar_constant(T value);

  /// x[B,in] * w[in,out] + b[1,out]
  Var affine(Var x, Var w, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, T factor);
  Var tanh(Var x);
  Var relu(Var x);
  /// Column-wise concatenation; all parts share the row count.
  Var concat(std::span<const Var> parts);
  Var concat(std::initializer_list<Var> parts) {
    return concat(std::span<const Var>(parts.begin(), parts.size()));
  }
  Var slice(Var x, int col_begin, int col_count);
  Var sum(Var x);
  Var mean(Var x);
  /// Row-wise sum of squares, [B,d] -> [B,1].
  Var squared_norm(Var x);
  /// Row-wise negative log-density of a diagonal Gaussian, [B,1].
  /// `log_std` is [B,d] or a broadcast [1,d].
  Var gaussian_nll(Var target, Var mean, Var log_std);
  /// Reparameterized draw mean + exp(log_std) * noise.
  Var gaussian_sample(Var mean, Var log_std, Var noise);
  Var softmax(Var x);
  Var clip(Var x, T lo, T hi);
  Var stop_gradient(Var x);

  const Matrix<T>& value(Var v) const;
  T scalar(Var v) const;
  OpKind kind(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).kind; }
  std::size_t size() const { return nodes_.size(); }

  /// When disabled, non-finite intermediates are allowed to propagate; used
  /// by batched inference that screens rows itself.
  void set_check_finite(bool enabled) { check_finite_ = enabled; }

  /// Gradients for every trainable leaf (zeros when unreachable from `root`).
  GradMap<T> backward(Var root);

 private:
  struct Node {
    OpKind kind = OpKind::Constant;
    std::vector<int> inputs;
    Matrix<T> value;
    const Matrix<T>* external = nullptr;
    bool requires_grad = false;
    std::string name;
    T attr0 = T(0);
    T attr1 = T(0);
    int iattr0 = 0;
  };

  const Node& node(Var v) const;
  const Matrix<T>& val(int id) const;
  Var push(Node node);
  void check_shape(bool ok, OpKind kind, const std::string& detail) const;

  const ParamStore<T>* store_ = nullptr;
  TrainableFilter trainable_;
  std::map<std::string, int> bound_;
  std::vector<Node> nodes_;
  bool check_finite_ = true;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  Eigen::Index worst_index = -1;
  std::size_t coordinates = 0;
};

/// Central-difference comparison of backward() against numeric derivatives
/// for every trainable coordinate. Error per coordinate is
/// |analytic - numeric| / max(1, |numeric|).
GradCheckReport finite_diff_check(ParamStore<double>& params,
                                  const std::function<Var(Tape<double>&)>& loss, double h,
                                  const TrainableFilter& trainable = {});

extern template class ParamStore<float>;
extern template class ParamStore<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace logo::ad
