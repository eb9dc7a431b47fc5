#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace grit::ad {

using Index = std::ptrdiff_t;
using Shape = std::vector<Index>;

template <typename Scalar>
using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;

template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

/// Raised when a primitive produces NaN/Inf while finite checking is on.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline Index numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape);

/// Graph recording is enabled unless a NoGradGuard is alive on this thread.
bool grad_enabled();
void set_grad_enabled(bool enabled);

class NoGradGuard {
 public:
  NoGradGuard() : previous_(grad_enabled()) { set_grad_enabled(false); }
  ~NoGradGuard() { set_grad_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// When on, every recorded op checks its output for NaN/Inf and throws NumericError.
/// Defaults to on in debug builds.
bool finite_checks_enabled();
void set_finite_checks(bool enabled);

template <typename Scalar>
struct Node {
  Shape shape;
  Array<Scalar> value;
  Array<Scalar> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad and accumulates into parents' grads.
  std::function<void(Node&)> backward_fn;

  Array<Scalar>& grad_buffer() {
    if (grad.size() != value.size()) grad = Array<Scalar>::Zero(value.size());
    return grad;
  }
};

/// Dense row-major array with optional reverse-mode gradient tracking.
///
/// A Tensor is a cheap handle: copies share the same node, so a parameter held
/// by a layer and by a ParameterSet is one object.
template <typename Scalar>
class Tensor {
 public:
  using scalar_type = Scalar;
  using NodePtr = std::shared_ptr<Node<Scalar>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, Scalar value, bool requires_grad = false);
  static Tensor from_values(const Shape& shape, Array<Scalar> values, bool requires_grad = false);
  static Tensor from_vector(const Shape& shape, const std::vector<Scalar>& values,
                            bool requires_grad = false);
  static Tensor scalar(Scalar value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  Index dim(int axis) const;
  Index numel() const { return node_->value.size(); }

  const Array<Scalar>& values() const { return node_->value; }
  /// Direct write access for leaves (optimizer updates, initialization).
  Array<Scalar>& mutable_values() { return node_->value; }
  Scalar item() const;
  Scalar at(Index flat) const { return node_->value[flat]; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  /// Gradient buffer; zeros if nothing has been accumulated yet.
  Array<Scalar> grad() const;
  void zero_grad() { node_->grad.resize(0); }

  /// Rows = product of all but the last axis, cols = last axis.
  ConstMatrixMap<Scalar> matrix() const;

  /// Same values, detached from the graph.
  Tensor detach() const;

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

/// Records a new node. Parents are kept only if graph recording is on and at
/// least one parent requires a gradient.
template <typename Scalar>
Tensor<Scalar> make_result(Shape shape, Array<Scalar> value,
                           std::vector<std::shared_ptr<Node<Scalar>>> parents,
                           std::function<void(Node<Scalar>&)> backward_fn);

/// Reverse-mode accumulation from a scalar root into every ancestor that
/// requires a gradient. Gradients accumulate across calls.
template <typename Scalar>
void backward(const Tensor<Scalar>& root);

}  // namespace grit::ad
