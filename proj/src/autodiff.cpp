#include "logo/autodiff.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace logo::ad {

// ---------------------------------------------------------------- ParamStore

template <class T>
void ParamStore<T>::add(const std::string& name, Matrix<T> value) {
  values_[name] = std::move(value);
}

template <class T>
Matrix<T>& ParamStore<T>::at(const std::string& name) {
  auto it = values_.find(name);
  if (it == values_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

template <class T>
const Matrix<T>& ParamStore<T>::at(const std::string& name) const {
  auto it = values_.find(name);
  if (it == values_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

template <class T>
std::size_t ParamStore<T>::count(const std::string& prefix) const {
  std::size_t total = 0;
  for (const auto& [name, value] : values_)
    if (name.rfind(prefix, 0) == 0) total += static_cast<std::size_t>(value.size());
  return total;
}

template <class T>
std::vector<std::string> ParamStore<T>::names(const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& [name, value] : values_)
    if (name.rfind(prefix, 0) == 0) out.push_back(name);
  return out;
}

TrainableFilter prefix_filter(std::vector<std::string> prefixes) {
  return [prefixes = std::move(prefixes)](const std::string& name) {
    for (const auto& p : prefixes)
      if (name.rfind(p, 0) == 0) return true;
    return false;
  };
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Constant: return "constant";
    case OpKind::Affine: return "affine";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::Tanh: return "tanh";
    case OpKind::Relu: return "relu";
    case OpKind::Concat: return "concat";
    case OpKind::Slice: return "slice";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::SquaredNorm: return "squared_norm";
    case OpKind::GaussianNll: return "gaussian_nll";
    case OpKind::GaussianSample: return "gaussian_sample";
    case OpKind::Softmax: return "softmax";
    case OpKind::Clip: return "clip";
    case OpKind::StopGradient: return "stop_gradient";
  }
  return "?";
}

// ---------------------------------------------------------------- Tape

template <class T>
Tape<T>::Tape(const ParamStore<T>& store, TrainableFilter trainable)
    : store_(&store), trainable_(std::move(trainable)) {}

template <class T>
const typename Tape<T>::Node& Tape<T>::node(Var v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
    throw std::out_of_range("invalid tape variable");
  return nodes_[static_cast<std::size_t>(v.id)];
}

template <class T>
const Matrix<T>& Tape<T>::val(int id) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  return n.external ? *n.external : n.value;
}

template <class T>
const Matrix<T>& Tape<T>::value(Var v) const {
  node(v);
  return val(v.id);
}

template <class T>
T Tape<T>::scalar(Var v) const {
  const auto& m = value(v);
  if (m.size() != 1) throw ShapeError("scalar() on non-scalar node " + std::to_string(v.id));
  return m(0, 0);
}

template <class T>
void Tape<T>::check_shape(bool ok, OpKind kind, const std::string& detail) const {
  if (!ok) {
    std::ostringstream os;
    os << "shape mismatch at node " << nodes_.size() << " (" << op_name(kind) << "): " << detail;
    throw ShapeError(os.str());
  }
}

template <class T>
Var Tape<T>::push(Node n) {
  const int id = static_cast<int>(nodes_.size());
  if (check_finite_ && n.kind != OpKind::Leaf && n.kind != OpKind::Constant) {
    const auto& v = n.external ? *n.external : n.value;
    if (!v.allFinite()) {
      std::ostringstream os;
      os << "non-finite value produced at node " << id << " (" << op_name(n.kind) << ")";
      throw NonFiniteError(os.str());
    }
  }
  nodes_.push_back(std::move(n));
  return Var{id};
}

namespace {
std::string dims(Eigen::Index r, Eigen::Index c) {
  return "[" + std::to_string(r) + "," + std::to_string(c) + "]";
}
}  // namespace

template <class T>
Var Tape<T>::param(const std::string& name) {
  if (auto it = bound_.find(name); it != bound_.end()) return Var{it->second};
  if (!store_) throw std::logic_error("tape has no parameter store bound");
  Node n;
  n.kind = OpKind::Leaf;
  n.external = &store_->at(name);
  n.requires_grad = !trainable_ || trainable_(name);
  n.name = name;
  Var v = push(std::move(n));
  bound_[name] = v.id;
  return v;
}

template <class T>
Var Tape<T>::leaf(const std::string& name, Matrix<T> value, bool trainable) {
  if (bound_.count(name)) throw std::logic_error("leaf '" + name + "' already bound");
  Node n;
  n.kind = OpKind::Leaf;
  n.value = std::move(value);
  n.requires_grad = trainable;
  n.name = name;
  Var v = push(std::move(n));
  bound_[name] = v.id;
  return v;
}

template <class T>
Var Tape<T>::constant(Matrix<T> value) {
  Node n;
  n.kind = OpKind::Constant;
  n.value = std::move(value);
  return push(std::move(n));
}

template <class T>
Var Tape<T>::scalar_constant(T value) {
  Matrix<T> m(1, 1);
  m(0, 0) = value;
  return constant(std::move(m));
}

template <class T>
Var Tape<T>::affine(Var x, Var w, Var b) {
  const auto& X = value(x);
  const auto& W = value(w);
  const auto& B = value(b);
  check_shape(X.cols() == W.rows() && B.rows() == 1 && B.cols() == W.cols(), OpKind::Affine,
              "x" + dims(X.rows(), X.cols()) + " w" + dims(W.rows(), W.cols()) + " b" +
                  dims(B.rows(), B.cols()));
  Node n;
  n.kind = OpKind::Affine;
  n.inputs = {x.id, w.id, b.id};
  n.value.noalias() = X * W;
  n.value.rowwise() += B.row(0);
  n.requires_grad = node(x).requires_grad || node(w).requires_grad || node(b).requires_grad;
  return push(std::move(n));
}

template <class T>
Var Tape<T>::add(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  check_shape(A.rows() == B.rows() && A.cols() == B.cols(), OpKind::Add,
              dims(A.rows(), A.cols()) + " vs " + dims(B.rows(), B.cols()));
  Node n;
  n.kind = OpKind::Add;
  n.inputs = {a.id, b.id};
  n.value = A + B;
  n.requires_grad = node(a).requires_grad || node(b).requires_grad;
  return push(std::move(n));
}

template <class T>
Var Tape<T>::sub(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  check_shape(A.rows() == B.rows() && A.cols() == B.cols(), OpKind::Sub,
              dims(A.rows(), A.cols()) + " vs " + dims(B.rows(), B.cols()));
  Node n;
  n.kind = OpKind::Sub;
  n.inputs = {a.id, b.id};
  n.value = A - B;
  n.requires_grad = node(a).requires_grad || node(b).requires_grad;
  return push(std::move(n));
}

template <class T>
Var Tape<T>::mul(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  check_shape(A.rows() == B.rows() && A.cols() == B.cols(), OpKind::Mul,
              dims(A.rows(), A.cols()) + " vs " + dims(B.rows(), B.cols()));
  Node n;
  n.kind = OpKind::Mul;
  n.inputs = {a.id, b.id};
  n.value = A.cwiseProduct(B);
  n.requires_grad = node(a).requires_grad || node(b).requires_grad;
  return push(std::move(n));
}

template <class T>
Var Tape<T>::scale(Var a, T factor) {
  Node n;
  n.kind = OpKind::Scale;
  n.inputs = {a.id};
  n.value = value(a) * factor;
  n.attr0 = factor;
  n.requires_grad = node(a).requires_grad;
  return push(std::move(n));
}

template <class T>
Var Tape<T>::tanh(Var x) {
  Node n;
  n.kind = OpKind::Tanh;
  n.inputs = {x.id};
  n.value = value(x).array().tanh().matrix();
  n.requires_grad = node(x).requires_grad;
  return push(std::move(n));
}

template <class T>
Var Tape<T>::relu(Var x) {
  Node n;
  n.kind = OpKind::Relu;
  n.inputs = {x.id};
  n.value = value(x).cwiseMax(T(0));
  n.requires_grad = node(x).requires_grad;
  return push(std::move(n));
}

template <class T>
Var Tape<T>::concat(std::span<const Var> parts) {
  check_shape(!parts.empty(), OpKind::Concat, "no inputs");
  const Eigen::Index rows = value(parts[0]).rows();
  Eigen::Index cols = 0;
  Node n;
  n.kind = OpKind::Concat;
  for (Var p : parts) {
    const auto& P = value(p);
    check_shape(P.rows() == rows, OpKind::Concat,
                "row count " + std::to_string(P.rows()) + " vs " + std::to_string(rows));
    cols += P.cols();
    n.inputs.push_back(p.id);
    n.requires_grad = n.requires_grad || node(p).requires_grad;
  }
  n.value.resize(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    const auto& P = value(p);
    n.value.middleCols(at, P.cols()) = P;
    at += P.cols();
  }
  return push(std::move(n));
}

template <class T>
Var Tape<T>::slice(Var x, int col_begin, int col_count) {
  const auto& X = value(x);
  check_shape(col_begin >= 0 && col_count > 0 && col_begin + col_count <= X.cols(), OpKind::Slice,
              "columns [" + std::to_string(col_begin) + ", +" + std::to_string(col_count) +
                  ") of " + dims(X.rows(), X.cols()));
  Node n;
  n.kind = OpKind::Slice;
  n.inputs = {x.id};
  n.value = X.middleCols(col_begin, col_count);
  n.iattr0 = col_begin;
  n.requires_grad = node(x).requires_grad;
  return push(std::move(n));
}

template <class T>
Var Tape<T>::sum(Var x) {
  Node n;
  n.kind = OpKind::Sum;
  n.inputs = {x.id};
  n.value.resize(1, 1);
  n.value(0, 0) = value(x).sum();
  n.requires_grad = node(x).requires_grad;
  return push(std::move(n));
}

template <class T>
Var Tape<T>::mean(Var x) {
  const auto& X = value(x);
  check_shape(X.size() > 0, OpKind::Mean, "empty input");
  Node n;
  n.kind = OpKind::Mean;
  n.inputs = {x.id};
  n.value.resize(1, 1);
  n.value(0, 0) = X.sum() / static_cast<T>(X.size());
  n.requires_grad = node(x).requires_grad;
  return push(std::move(n));
}

template <class T>
Var Tape<T>::squared_norm(Var x) {
  Node n;
  n.kind = OpKind::SquaredNorm;
  n.inputs = {x.id};
  n.value = value(x).rowwise().squaredNorm();
  n.requires_grad = node(x).requires_grad;
  return push(std::move(n));
}

template <class T>
Var Tape<T>::gaussian_nll(Var target, Var mean, Var log_std) {
  const auto& Y = value(target);
  const auto& M = value(mean);
  const auto& L = value(log_std);
  check_shape(Y.rows() == M.rows() && Y.cols() == M.cols() && L.cols() == M.cols() &&
                  (L.rows() == M.rows() || L.rows() == 1),
              OpKind::GaussianNll,
              "target" + dims(Y.rows(), Y.cols()) + " mean" + dims(M.rows(), M.cols()) +
                  " log_std" + dims(L.rows(), L.cols()));
  const T half_log_2pi = T(0.5) * std::log(T(2) * std::numbers::pi_v<T>);
  Node n;
  n.kind = OpKind::GaussianNll;
  n.inputs = {target.id, mean.id, log_std.id};
  n.value.resize(M.rows(), 1);
  for (Eigen::Index r = 0; r < M.rows(); ++r) {
    const Eigen::Index lr = L.rows() == 1 ? 0 : r;
    T acc = T(0);
    for (Eigen::Index c = 0; c < M.cols(); ++c) {
      const T z = (Y(r, c) - M(r, c)) * std::exp(-L(lr, c));
      acc += T(0.5) * z * z + L(lr, c) + half_log_2pi;
    }
    n.value(r, 0) = acc;
  }
  n.requires_grad =
      node(target).requires_grad || node(mean).requires_grad || node(log_std).requires_grad;
  return push(std::move(n));
}

template <class T>
Var Tape<T>::gaussian_sample(Var mean, Var log_std, Var noise) {
  const auto& M = value(mean);
  const auto& L = value(log_std);
  const auto& E = value(noise);
  check_shape(E.rows() == M.rows() && E.cols() == M.cols() && L.cols() == M.cols() &&
                  (L.rows() == M.rows() || L.rows() == 1),
              OpKind::GaussianSample,
              "mean" + dims(M.rows(), M.cols()) + " log_std" + dims(L.rows(), L.cols()) +
                  " noise" + dims(E.rows(), E.cols()));
  Node n;
  n.kind = OpKind::GaussianSample;
  n.inputs = {mean.id, log_std.id, noise.id};
  n.value.resize(M.rows(), M.cols());
  for (Eigen::Index r = 0; r < M.rows(); ++r) {
    const Eigen::Index lr = L.rows() == 1 ? 0 : r;
    for (Eigen::Index c = 0; c < M.cols(); ++c)
      n.value(r, c) = M(r, c) + std::exp(L(lr, c)) * E(r, c);
  }
  n.requires_grad =
      node(mean).requires_grad || node(log_std).requires_grad || node(noise).requires_grad;
  return push(std::move(n));
}

template <class T>
Var Tape<T>::softmax(Var x) {
  const auto& X = value(x);
  Node n;
  n.kind = OpKind::Softmax;
  n.inputs = {x.id};
  n.value.resize(X.rows(), X.cols());
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    const T top = X.row(r).maxCoeff();
    n.value.row(r) = (X.row(r).array() - top).exp().matrix();
    n.value.row(r) /= n.value.row(r).sum();
  }
  n.requires_grad = node(x).requires_grad;
  return push(std::move(n));
}

template <class T>
Var Tape<T>::clip(Var x, T lo, T hi) {
  if (!(lo <= hi)) throw std::invalid_argument("clip bounds out of order");
  Node n;
  n.kind = OpKind::Clip;
  n.inputs = {x.id};
  n.value = value(x).cwiseMax(lo).cwiseMin(hi);
  n.attr0 = lo;
  n.attr1 = hi;
  n.requires_grad = node(x).requires_grad;
  return push(std::move(n));
}

template <class T>
Var Tape<T>::stop_gradient(Var x) {
  Node n;
  n.kind = OpKind::StopGradient;
  n.inputs = {x.id};
  n.value = value(x);
  n.requires_grad = false;
  return push(std::move(n));
}

template <class T>
GradMap<T> Tape<T>::backward(Var root) {
  const auto& R = value(root);
  if (R.size() != 1)
    throw ShapeError("backward requires a scalar terminal node, got " + dims(R.rows(), R.cols()));

  std::vector<Matrix<T>> grads(nodes_.size());
  auto accumulate = [&](int id, const auto& g) {
    if (!nodes_[static_cast<std::size_t>(id)].requires_grad) return;
    auto& slot = grads[static_cast<std::size_t>(id)];
    if (slot.size() == 0)
      slot = g;
    else
      slot += g;
  };
  grads[static_cast<std::size_t>(root.id)] = Matrix<T>::Ones(1, 1);

  for (int id = root.id; id >= 0; --id) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    Matrix<T>& g = grads[static_cast<std::size_t>(id)];
    if (g.size() == 0 || !n.requires_grad) continue;
    const auto& out = val(id);
    switch (n.kind) {
      case OpKind::Leaf:
      case OpKind::Constant:
      case OpKind::StopGradient:
        break;
      case OpKind::Affine: {
        const auto& X = val(n.inputs[0]);
        const auto& W = val(n.inputs[1]);
        if (nodes_[static_cast<std::size_t>(n.inputs[0])].requires_grad) {
          Matrix<T> dx = g * W.transpose();
          accumulate(n.inputs[0], dx);
        }
        if (nodes_[static_cast<std::size_t>(n.inputs[1])].requires_grad) {
          Matrix<T> dw = X.transpose() * g;
          accumulate(n.inputs[1], dw);
        }
        if (nodes_[static_cast<std::size_t>(n.inputs[2])].requires_grad) {
          Matrix<T> db = g.colwise().sum();
          accumulate(n.inputs[2], db);
        }
        break;
      }
      case OpKind::Add:
        accumulate(n.inputs[0], g);
        accumulate(n.inputs[1], g);
        break;
      case OpKind::Sub:
        accumulate(n.inputs[0], g);
        accumulate(n.inputs[1], Matrix<T>(-g));
        break;
      case OpKind::Mul:
        accumulate(n.inputs[0], Matrix<T>(g.cwiseProduct(val(n.inputs[1]))));
        accumulate(n.inputs[1], Matrix<T>(g.cwiseProduct(val(n.inputs[0]))));
        break;
      case OpKind::Scale:
        accumulate(n.inputs[0], Matrix<T>(g * n.attr0));
        break;
      case OpKind::Tanh:
        accumulate(n.inputs[0],
                   Matrix<T>((g.array() * (T(1) - out.array().square())).matrix()));
        break;
      case OpKind::Relu: {
        const auto& X = val(n.inputs[0]);
        accumulate(n.inputs[0], Matrix<T>((X.array() > T(0)).select(g.array(), T(0)).matrix()));
        break;
      }
      case OpKind::Concat: {
        Eigen::Index at = 0;
        for (int in : n.inputs) {
          const Eigen::Index c = val(in).cols();
          accumulate(in, Matrix<T>(g.middleCols(at, c)));
          at += c;
        }
        break;
      }
      case OpKind::Slice: {
        const auto& X = val(n.inputs[0]);
        Matrix<T> dx = Matrix<T>::Zero(X.rows(), X.cols());
        dx.middleCols(n.iattr0, g.cols()) = g;
        accumulate(n.inputs[0], dx);
        break;
      }
      case OpKind::Sum: {
        const auto& X = val(n.inputs[0]);
        accumulate(n.inputs[0], Matrix<T>(Matrix<T>::Constant(X.rows(), X.cols(), g(0, 0))));
        break;
      }
      case OpKind::Mean: {
        const auto& X = val(n.inputs[0]);
        const T s = g(0, 0) / static_cast<T>(X.size());
        accumulate(n.inputs[0], Matrix<T>(Matrix<T>::Constant(X.rows(), X.cols(), s)));
        break;
      }
      case OpKind::SquaredNorm: {
        const auto& X = val(n.inputs[0]);
        Matrix<T> dx = X;
        for (Eigen::Index r = 0; r < X.rows(); ++r) dx.row(r) *= T(2) * g(r, 0);
        accumulate(n.inputs[0], dx);
        break;
      }
      case OpKind::GaussianNll: {
        const auto& Y = val(n.inputs[0]);
        const auto& M = val(n.inputs[1]);
        const auto& L = val(n.inputs[2]);
        Matrix<T> dm(M.rows(), M.cols());
        Matrix<T> dl = Matrix<T>::Zero(L.rows(), L.cols());
        for (Eigen::Index r = 0; r < M.rows(); ++r) {
          const Eigen::Index lr = L.rows() == 1 ? 0 : r;
          for (Eigen::Index c = 0; c < M.cols(); ++c) {
            const T inv_var = std::exp(T(-2) * L(lr, c));
            const T diff = Y(r, c) - M(r, c);
            dm(r, c) = -diff * inv_var * g(r, 0);
            dl(lr, c) += (T(1) - diff * diff * inv_var) * g(r, 0);
          }
        }
        accumulate(n.inputs[0], Matrix<T>(-dm));
        accumulate(n.inputs[1], dm);
        accumulate(n.inputs[2], dl);
        break;
      }
      case OpKind::GaussianSample: {
        const auto& M = val(n.inputs[0]);
        const auto& L = val(n.inputs[1]);
        const auto& E = val(n.inputs[2]);
        Matrix<T> dl = Matrix<T>::Zero(L.rows(), L.cols());
        Matrix<T> de(M.rows(), M.cols());
        for (Eigen::Index r = 0; r < M.rows(); ++r) {
          const Eigen::Index lr = L.rows() == 1 ? 0 : r;
          for (Eigen::Index c = 0; c < M.cols(); ++c) {
            const T sd = std::exp(L(lr, c));
            dl(lr, c) += g(r, c) * sd * E(r, c);
            de(r, c) = g(r, c) * sd;
          }
        }
        accumulate(n.inputs[0], g);
        accumulate(n.inputs[1], dl);
        accumulate(n.inputs[2], de);
        break;
      }
      case OpKind::Softmax: {
        Matrix<T> dx(out.rows(), out.cols());
        for (Eigen::Index r = 0; r < out.rows(); ++r) {
          const T dot = g.row(r).dot(out.row(r));
          dx.row(r) = (out.row(r).array() * (g.row(r).array() - dot)).matrix();
        }
        accumulate(n.inputs[0], dx);
        break;
      }
      case OpKind::Clip: {
        const auto& X = val(n.inputs[0]);
        accumulate(n.inputs[0],
                   Matrix<T>(((X.array() >= n.attr0) && (X.array() <= n.attr1))
                                 .select(g.array(), T(0))
                                 .matrix()));
        break;
      }
    }
    if (n.kind != OpKind::Leaf) g.resize(0, 0);
  }

  GradMap<T> out;
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    const Node& n = nodes_[id];
    if (n.kind != OpKind::Leaf || !n.requires_grad) continue;
    const auto& v = val(static_cast<int>(id));
    if (grads[id].size() == 0)
      out[n.name] = Matrix<T>::Zero(v.rows(), v.cols());
    else
      out[n.name] = std::move(grads[id]);
  }
  return out;
}

// ---------------------------------------------------------------- grad check

GradCheckReport finite_diff_check(ParamStore<double>& params,
                                  const std::function<Var(Tape<double>&)>& loss, double h,
                                  const TrainableFilter& trainable) {
  if (!(h > 0.0 && h <= 1e-2)) throw std::invalid_argument("finite-difference step outside (0, 1e-2]");
  GradMap<double> analytic;
  {
    Tape<double> tape(params, trainable);
    Var root = loss(tape);
    analytic = tape.backward(root);
  }
  auto evaluate = [&]() {
    Tape<double> tape(params, trainable);
    return tape.scalar(loss(tape));
  };

  GradCheckReport report;
  for (const auto& [name, grad] : analytic) {
    if (!params.contains(name)) continue;
    auto& p = params.at(name);
    for (Eigen::Index k = 0; k < p.size(); ++k) {
      const double saved = p.data()[k];
      p.data()[k] = saved + h;
      const double plus = evaluate();
      p.data()[k] = saved - h;
      const double minus = evaluate();
      p.data()[k] = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      const double a = grad.data()[k];
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(numeric));
      if (!std::isfinite(err))
        throw NonFiniteError("non-finite gradient comparison at " + name + "[" +
                             std::to_string(k) + "]");
      ++report.coordinates;
      if (err > report.max_relative_error || report.worst_index < 0) {
        report.max_relative_error = err;
        report.worst_parameter = name;
        report.worst_index = k;
      }
    }
  }
  return report;
}

template class ParamStore<float>;
template class ParamStore<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace logo::ad
