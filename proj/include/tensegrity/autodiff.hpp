#pragma once

// Dense reverse-mode automatic differentiation over row-major Eigen matrices.
//
// A Tensor is a shared handle to a node in a dynamically recorded computation
// graph. Rank 0 (scalar), rank 1 (stored as an n x 1 column) and rank 2 shapes
// are supported, which covers MLPs and gather/scatter message passing.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <Eigen/Core>

#include "tensegrity/errors.hpp"

namespace tensegrity::autodiff {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << ')';
  return out.str();
}

namespace detail {

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

/// When set, relu folds its activation pattern into this fingerprint.
inline std::uint64_t*& relu_pattern_sink() {
  thread_local std::uint64_t* sink = nullptr;
  return sink;
}

template <typename T>
struct Node {
  Shape shape;
  Matrix<T> value;
  Matrix<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad and accumulates into the parents that require grad.
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  void ensure_grad() {
    if (grad.rows() != value.rows() || grad.cols() != value.cols()) grad = Matrix<T>::Zero(value.rows(), value.cols());
  }
};

inline void storage_dims(const Shape& shape, Index& rows, Index& cols) {
  if (shape.empty()) {
    rows = cols = 1;
  } else if (shape.size() == 1) {
    rows = shape[0];
    cols = 1;
  } else if (shape.size() == 2) {
    rows = shape[0];
    cols = shape[1];
  } else {
    throw ShapeMismatch("rank " + std::to_string(shape.size()) + " tensors are not supported");
  }
}

}  // namespace detail

/// Disables graph recording in its scope (evaluation, finite differences).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

template <typename T>
class Tensor {
 public:
  using Node = detail::Node<T>;

  Tensor() = default;

  Tensor(Shape shape, Matrix<T> value, bool requires_grad = false) : node_(std::make_shared<Node>()) {
    Index rows = 0, cols = 0;
    detail::storage_dims(shape, rows, cols);
    for (Index d : shape) {
      if (d <= 0) throw ShapeMismatch("non-positive dimension in " + shape_string(shape));
    }
    if (value.rows() != rows || value.cols() != cols) {
      throw ShapeMismatch("value storage does not match shape " + shape_string(shape));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static Tensor matrix(Matrix<T> value, bool requires_grad = false) {
    Shape shape{value.rows(), value.cols()};
    return Tensor(std::move(shape), std::move(value), requires_grad);
  }
  static Tensor vector(std::span<const T> values, bool requires_grad = false) {
    Matrix<T> m(static_cast<Index>(values.size()), 1);
    for (std::size_t i = 0; i < values.size(); ++i) m(static_cast<Index>(i), 0) = values[i];
    return Tensor(Shape{static_cast<Index>(values.size())}, std::move(m), requires_grad);
  }
  static Tensor vector(std::initializer_list<T> values, bool requires_grad = false) {
    return vector(std::span<const T>(values.begin(), values.size()), requires_grad);
  }
  static Tensor scalar(T v, bool requires_grad = false) {
    Matrix<T> m(1, 1);
    m(0, 0) = v;
    return Tensor(Shape{}, std::move(m), requires_grad);
  }
  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Index rows = 0, cols = 0;
    detail::storage_dims(shape, rows, cols);
    return Tensor(std::move(shape), Matrix<T>::Zero(rows, cols), requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  Index rank() const { return static_cast<Index>(node_->shape.size()); }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Index size() const { return node_->value.size(); }

  const Matrix<T>& value() const { return node_->value; }
  /// In-place access for optimizers; never call while a graph using this
  /// tensor is still awaiting backward.
  Matrix<T>& mutable_value() { return node_->value; }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size() && node_->grad.size() > 0; }
  const Matrix<T>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    if (node_->grad.size() > 0) node_->grad.setZero();
  }

  T item() const {
    if (size() != 1) throw NotScalar("item() on tensor of shape " + shape_string(shape()));
    return node_->value(0, 0);
  }
  T operator()(Index i) const { return node_->value.data()[i]; }
  T operator()(Index r, Index c) const { return node_->value(r, c); }

  /// Same storage, detached from any graph.
  Tensor detach() const { return Tensor(node_->shape, node_->value, false); }

  const std::shared_ptr<Node>& node() const { return node_; }

  /// Builds a result node whose parents are recorded only when grad mode is
  /// on and at least one parent requires grad.
  static Tensor make_result(Shape shape, Matrix<T> value, std::vector<std::shared_ptr<Node>> parents,
                            std::function<void(Node&)> backward_fn) {
    Tensor out(std::move(shape), std::move(value), false);
    if (!grad_enabled()) return out;
    const bool track =
        std::any_of(parents.begin(), parents.end(), [](const auto& p) { return p && p->requires_grad; });
    if (track) {
      out.node_->requires_grad = true;
      out.node_->parents = std::move(parents);
      out.node_->backward_fn = std::move(backward_fn);
    }
    return out;
  }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

template <typename T>
void accumulate(const std::shared_ptr<Node<T>>& node, const auto& delta) {
  if (!node->requires_grad) return;
  node->ensure_grad();
  node->grad += delta;
}

template <typename T>
Shape shape_of_rows_cols(const Tensor<T>& like, Index rows, Index cols) {
  if (like.rank() == 2) return {rows, cols};
  if (like.rank() == 1) return {rows};
  return {};
}

}  // namespace detail

/// (m,k)x(k,n) -> (m,n); (m,k)x(k) -> (m); (k)x(k,n) -> (n).
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const bool vec_left = a.rank() == 1 && b.rank() == 2;
  const Index inner_a = vec_left ? a.rows() : a.cols();
  if ((a.rank() != 2 && !vec_left) || b.rank() == 0 || inner_a != b.rows()) {
    throw ShapeMismatch("matmul " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Matrix<T> value;
  Shape shape;
  if (vec_left) {
    value = (a.value().transpose() * b.value()).transpose();
    shape = {b.cols()};
  } else {
    value.noalias() = a.value() * b.value();
    shape = b.rank() == 1 ? Shape{a.rows()} : Shape{a.rows(), b.cols()};
  }
  auto pa = a.node();
  auto pb = b.node();
  return Tensor<T>::make_result(std::move(shape), std::move(value), {pa, pb}, [pa, pb, vec_left](detail::Node<T>& self) {
    if (vec_left) {
      // out = b^T a, so d a = b dout, d b = a dout^T.
      if (pa->requires_grad) detail::accumulate(pa, pb->value * self.grad);
      if (pb->requires_grad) detail::accumulate(pb, pa->value * self.grad.transpose());
      return;
    }
    if (pa->requires_grad) detail::accumulate(pa, self.grad * pb->value.transpose());
    if (pb->requires_grad) detail::accumulate(pb, pa->value.transpose() * self.grad);
  });
}

/// Elementwise sum; b may also be a rank-1 bias of length a.cols() that is
/// broadcast over the rows of a rank-2 a.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  auto pa = a.node();
  auto pb = b.node();
  if (a.shape() == b.shape()) {
    Matrix<T> value = a.value() + b.value();
    return Tensor<T>::make_result(a.shape(), std::move(value), {pa, pb}, [pa, pb](detail::Node<T>& self) {
      detail::accumulate(pa, self.grad);
      detail::accumulate(pb, self.grad);
    });
  }
  if (a.rank() == 2 && b.rank() == 1 && b.rows() == a.cols()) {
    Matrix<T> value = a.value().rowwise() + b.value().col(0).transpose();
    return Tensor<T>::make_result(a.shape(), std::move(value), {pa, pb}, [pa, pb](detail::Node<T>& self) {
      detail::accumulate(pa, self.grad);
      if (pb->requires_grad) detail::accumulate(pb, self.grad.colwise().sum().transpose());
    });
  }
  throw ShapeMismatch("add " + shape_string(a.shape()) + " + " + shape_string(b.shape()));
}

/// Elementwise product of equally shaped tensors.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeMismatch("mul " + shape_string(a.shape()) + " * " + shape_string(b.shape()));
  auto pa = a.node();
  auto pb = b.node();
  Matrix<T> value = a.value().cwiseProduct(b.value());
  return Tensor<T>::make_result(a.shape(), std::move(value), {pa, pb}, [pa, pb](detail::Node<T>& self) {
    if (pa->requires_grad) detail::accumulate(pa, self.grad.cwiseProduct(pb->value));
    if (pb->requires_grad) detail::accumulate(pb, self.grad.cwiseProduct(pa->value));
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T k) {
  auto pa = a.node();
  Matrix<T> value = a.value() * k;
  return Tensor<T>::make_result(a.shape(), std::move(value), {pa},
                                [pa, k](detail::Node<T>& self) { detail::accumulate(pa, self.grad * k); });
}

/// max(x, 0); the subgradient at 0 is 0.
template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  auto pa = a.node();
  Matrix<T> value = a.value().cwiseMax(T(0));
  if (std::uint64_t* sink = detail::relu_pattern_sink()) {
    const auto& in = a.value();
    for (Index i = 0; i < in.size(); ++i) {
      *sink = (*sink ^ (in.data()[i] > T(0) ? 0x9E3779B97F4A7C15ULL : 0x632BE59BD9B4E019ULL)) * 0x100000001B3ULL;
    }
  }
  return Tensor<T>::make_result(a.shape(), std::move(value), {pa}, [pa](detail::Node<T>& self) {
    detail::accumulate(pa, (pa->value.array() > T(0)).select(self.grad, T(0)));
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  auto pa = a.node();
  Matrix<T> value = a.value().unaryExpr([](T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
  });
  return Tensor<T>::make_result(a.shape(), std::move(value), {pa}, [pa](detail::Node<T>& self) {
    detail::accumulate(pa, self.grad.cwiseProduct(self.value.cwiseProduct((T(1) - self.value.array()).matrix())));
  });
}

/// Concatenation along axis 0 (rows) or 1 (columns).
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw ShapeMismatch("concat of zero tensors");
  const Tensor<T>& first = parts.front();
  if (axis < 0 || axis >= std::max<Index>(first.rank(), 1) || first.rank() == 0) {
    throw ShapeMismatch("concat axis " + std::to_string(axis) + " invalid for " + shape_string(first.shape()));
  }
  Index rows = 0, cols = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.rank()) throw ShapeMismatch("concat rank mismatch " + shape_string(first.shape()) + " vs " + shape_string(p.shape()));
    if (axis == 0) {
      if (p.cols() != first.cols()) throw ShapeMismatch("concat " + shape_string(first.shape()) + " with " + shape_string(p.shape()));
      rows += p.rows();
      cols = p.cols();
    } else {
      if (p.rows() != first.rows()) throw ShapeMismatch("concat " + shape_string(first.shape()) + " with " + shape_string(p.shape()));
      cols += p.cols();
      rows = p.rows();
    }
  }
  Matrix<T> value(rows, cols);
  std::vector<std::shared_ptr<detail::Node<T>>> nodes;
  std::vector<Index> offsets;
  Index offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    if (axis == 0) {
      value.middleRows(offset, p.rows()) = p.value();
      offset += p.rows();
    } else {
      value.middleCols(offset, p.cols()) = p.value();
      offset += p.cols();
    }
    nodes.push_back(p.node());
  }
  Shape shape = first.rank() == 1 ? Shape{rows} : Shape{rows, cols};
  auto parents = nodes;
  return Tensor<T>::make_result(std::move(shape), std::move(value), std::move(parents),
                                [nodes, offsets, axis](detail::Node<T>& self) {
                                  for (std::size_t i = 0; i < nodes.size(); ++i) {
                                    const auto& n = nodes[i];
                                    if (!n->requires_grad) continue;
                                    if (axis == 0) {
                                      detail::accumulate(n, self.grad.middleRows(offsets[i], n->value.rows()));
                                    } else {
                                      detail::accumulate(n, self.grad.middleCols(offsets[i], n->value.cols()));
                                    }
                                  }
                                });
}

/// Sums out one axis: (r,c) -> (c) for axis 0, (r) for axis 1; (n) -> scalar.
template <typename T>
Tensor<T> sum_over(const Tensor<T>& a, int axis) {
  auto pa = a.node();
  if (a.rank() == 1 && axis == 0) {
    Matrix<T> value(1, 1);
    value(0, 0) = a.value().sum();
    return Tensor<T>::make_result(Shape{}, std::move(value), {pa}, [pa](detail::Node<T>& self) {
      detail::accumulate(pa, Matrix<T>::Constant(pa->value.rows(), pa->value.cols(), self.grad(0, 0)));
    });
  }
  if (a.rank() != 2 || (axis != 0 && axis != 1)) {
    throw ShapeMismatch("sum_over axis " + std::to_string(axis) + " invalid for " + shape_string(a.shape()));
  }
  if (axis == 0) {
    Matrix<T> value = a.value().colwise().sum().transpose();
    return Tensor<T>::make_result(Shape{a.cols()}, std::move(value), {pa}, [pa](detail::Node<T>& self) {
      detail::accumulate(pa, self.grad.col(0).transpose().replicate(pa->value.rows(), 1));
    });
  }
  Matrix<T> value = a.value().rowwise().sum();
  return Tensor<T>::make_result(Shape{a.rows()}, std::move(value), {pa}, [pa](detail::Node<T>& self) {
    detail::accumulate(pa, self.grad.col(0).replicate(1, pa->value.cols()));
  });
}

/// Sum of all elements as a scalar.
template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  auto pa = a.node();
  Matrix<T> value(1, 1);
  value(0, 0) = a.value().sum();
  return Tensor<T>::make_result(Shape{}, std::move(value), {pa}, [pa](detail::Node<T>& self) {
    detail::accumulate(pa, Matrix<T>::Constant(pa->value.rows(), pa->value.cols(), self.grad(0, 0)));
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

/// out[k] = a[index[k]] row-wise.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, std::vector<Index> index) {
  if (a.rank() == 0) throw ShapeMismatch("gather_rows on scalar");
  Matrix<T> value(static_cast<Index>(index.size()), a.cols());
  for (std::size_t k = 0; k < index.size(); ++k) {
    if (index[k] < 0 || index[k] >= a.rows()) throw ShapeMismatch("gather_rows index out of range for " + shape_string(a.shape()));
    value.row(static_cast<Index>(k)) = a.value().row(index[k]);
  }
  Shape shape = a.rank() == 1 ? Shape{value.rows()} : Shape{value.rows(), value.cols()};
  auto pa = a.node();
  return Tensor<T>::make_result(std::move(shape), std::move(value), {pa},
                                [pa, index = std::move(index)](detail::Node<T>& self) {
                                  if (!pa->requires_grad) return;
                                  pa->ensure_grad();
                                  for (std::size_t k = 0; k < index.size(); ++k) {
                                    pa->grad.row(index[k]) += self.grad.row(static_cast<Index>(k));
                                  }
                                });
}

/// out has out_rows rows; out[dst[k]] += a[src[k]] for every pair k.
template <typename T>
Tensor<T> scatter_add_rows(const Tensor<T>& a, std::vector<Index> src, std::vector<Index> dst, Index out_rows) {
  if (src.size() != dst.size()) throw ShapeMismatch("scatter_add_rows index lists differ in length");
  if (a.rank() == 0 || out_rows <= 0) throw ShapeMismatch("scatter_add_rows on " + shape_string(a.shape()));
  Matrix<T> value = Matrix<T>::Zero(out_rows, a.cols());
  for (std::size_t k = 0; k < src.size(); ++k) {
    if (src[k] < 0 || src[k] >= a.rows() || dst[k] < 0 || dst[k] >= out_rows) {
      throw ShapeMismatch("scatter_add_rows index out of range");
    }
    value.row(dst[k]) += a.value().row(src[k]);
  }
  Shape shape = a.rank() == 1 ? Shape{out_rows} : Shape{out_rows, a.cols()};
  auto pa = a.node();
  return Tensor<T>::make_result(std::move(shape), std::move(value), {pa},
                                [pa, src = std::move(src), dst = std::move(dst)](detail::Node<T>& self) {
                                  if (!pa->requires_grad) return;
                                  pa->ensure_grad();
                                  for (std::size_t k = 0; k < src.size(); ++k) pa->grad.row(src[k]) += self.grad.row(dst[k]);
                                });
}

/// Mean over all entries of max(z,0) - z*c + log(1 + exp(-|z|)).
template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const Matrix<T>& labels) {
  if (labels.rows() != logits.rows() || labels.cols() != logits.cols()) {
    throw ShapeMismatch("bce_with_logits logits " + shape_string(logits.shape()) + " vs labels (" +
                        std::to_string(labels.rows()) + "," + std::to_string(labels.cols()) + ")");
  }
  const auto& z = logits.value();
  const T n = static_cast<T>(z.size());
  T total = 0;
  for (Index i = 0; i < z.size(); ++i) {
    const T x = z.data()[i];
    total += std::max(x, T(0)) - x * labels.data()[i] + std::log1p(std::exp(-std::abs(x)));
  }
  Matrix<T> value(1, 1);
  value(0, 0) = total / n;
  auto pz = logits.node();
  return Tensor<T>::make_result(Shape{}, std::move(value), {pz}, [pz, labels, n](detail::Node<T>& self) {
    if (!pz->requires_grad) return;
    const T g = self.grad(0, 0) / n;
    Matrix<T> d = pz->value.unaryExpr([](T x) {
      if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
      const T e = std::exp(x);
      return e / (T(1) + e);
    });
    d -= labels;
    detail::accumulate(pz, d * g);
  });
}

/// Reverse sweep from a scalar. Leaf gradients accumulate across calls;
/// interior gradients are recomputed on every call.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.size() != 1) throw NotScalar("backward on tensor of shape " + shape_string(loss.shape()));
  using NodePtr = detail::Node<T>*;
  std::vector<NodePtr> order;
  std::unordered_set<NodePtr> visited;
  std::vector<std::pair<NodePtr, std::size_t>> stack;
  NodePtr root = loss.node().get();
  if (!root->requires_grad) return;
  stack.push_back({root, 0});
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodePtr parent = node->parents[next++].get();
      if (parent && parent->requires_grad && visited.insert(parent).second) stack.push_back({parent, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (NodePtr n : order) {
    if (!n->is_leaf()) n->grad = Matrix<T>::Zero(n->value.rows(), n->value.cols());
  }
  root->ensure_grad();
  root->grad(0, 0) += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (!(*it)->is_leaf()) (*it)->backward_fn(**it);
  }
}

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t coordinates_checked = 0;
  std::size_t step_reductions = 0;
  std::size_t kinks_skipped = 0;
  std::size_t worst_tensor = 0;
  Index worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Central-difference check of the analytic gradient of `loss_fn` with
/// respect to `params`. Relative error per coordinate is
/// |a - n| / max(1e-8, |a| + |n|). When max_per_tensor > 0 only that many
/// randomly chosen coordinates of each tensor are perturbed.
///
/// A central difference is only valid when no relu input changes sign
/// between the two probes. Such coordinates are retried with the step cut by
/// 10 up to `max_reductions` times, then skipped and counted.
inline GradCheckReport finite_difference_check(const std::function<Tensor<double>()>& loss_fn,
                                               std::vector<Tensor<double>> params, double h = 1e-5,
                                               std::size_t max_per_tensor = 0, std::uint64_t seed = 0,
                                               int max_reductions = 3) {
  struct PatternScope {
    std::uint64_t value = 0xCBF29CE484222325ULL;
    std::uint64_t* previous;
    PatternScope() : previous(detail::relu_pattern_sink()) { detail::relu_pattern_sink() = &value; }
    ~PatternScope() { detail::relu_pattern_sink() = previous; }
    PatternScope(const PatternScope&) = delete;
    PatternScope& operator=(const PatternScope&) = delete;
  };
  auto traced = [&](std::uint64_t& pattern) {
    PatternScope scope;
    const double v = loss_fn().item();
    pattern = scope.value;
    return v;
  };

  for (auto& p : params) p.zero_grad();
  std::uint64_t base_pattern = 0;
  {
    PatternScope scope;
    const Tensor<double> loss = loss_fn();
    base_pattern = scope.value;
    backward(loss);
  }
  GradCheckReport report;
  std::mt19937_64 rng(seed);
  NoGradGuard no_grad;
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& p = params[t];
    const Matrix<double> analytic = p.grad();
    std::vector<Index> coords(static_cast<std::size_t>(p.size()));
    for (Index i = 0; i < p.size(); ++i) coords[static_cast<std::size_t>(i)] = i;
    if (max_per_tensor > 0 && coords.size() > max_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(max_per_tensor);
    }
    for (Index i : coords) {
      double& slot = p.mutable_value().data()[i];
      const double saved = slot;
      double step = h;
      bool smooth = false;
      double numeric = 0.0;
      for (int attempt = 0; attempt <= max_reductions; ++attempt, step /= 10.0) {
        if (attempt > 0) ++report.step_reductions;
        std::uint64_t plus_pattern = 0, minus_pattern = 0;
        slot = saved + step;
        const double plus = traced(plus_pattern);
        slot = saved - step;
        const double minus = traced(minus_pattern);
        slot = saved;
        numeric = (plus - minus) / (2.0 * step);
        if (plus_pattern == base_pattern && minus_pattern == base_pattern) {
          smooth = true;
          break;
        }
      }
      if (!smooth) {
        ++report.kinks_skipped;
        continue;
      }
      const double a = analytic.data()[i];
      const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      ++report.coordinates_checked;
      if (rel > report.max_relative_error || report.coordinates_checked == 1) {
        report.max_relative_error = std::max(report.max_relative_error, rel);
        report.worst_tensor = t;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace tensegrity::autodiff
