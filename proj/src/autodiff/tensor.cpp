#include "grit/autodiff/tensor.hpp"

#include <sstream>
#include <unordered_set>

namespace grit::ad {

namespace {
thread_local bool g_grad_enabled = true;
#ifdef NDEBUG
thread_local bool g_finite_checks = false;
#else
thread_local bool g_finite_checks = true;
#endif
}  // namespace

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool enabled) { g_grad_enabled = enabled; }
bool finite_checks_enabled() { return g_finite_checks; }
void set_finite_checks(bool enabled) { g_finite_checks = enabled; }

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? ", " : "") << shape[i];
  out << ')';
  return out.str();
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::from_values(const Shape& shape, Array<Scalar> values, bool requires_grad) {
  for (Index d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor dimensions must be positive: " + shape_string(shape));
  }
  if (values.size() != ad::numel(shape)) {
    throw std::invalid_argument("value count " + std::to_string(values.size()) + " does not match shape " +
                                shape_string(shape));
  }
  auto node = std::make_shared<Node<Scalar>>();
  node->shape = shape;
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::zeros(const Shape& shape, bool requires_grad) {
  return from_values(shape, Array<Scalar>::Zero(ad::numel(shape)), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::full(const Shape& shape, Scalar value, bool requires_grad) {
  return from_values(shape, Array<Scalar>::Constant(ad::numel(shape), value), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::from_vector(const Shape& shape, const std::vector<Scalar>& values,
                                           bool requires_grad) {
  Array<Scalar> a(static_cast<Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) a[static_cast<Index>(i)] = values[i];
  return from_values(shape, std::move(a), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::scalar(Scalar value, bool requires_grad) {
  return full({1}, value, requires_grad);
}

template <typename Scalar>
Index Tensor<Scalar>::dim(int axis) const {
  const int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw std::out_of_range("axis out of range for shape " + shape_string(shape()));
  return node_->shape[static_cast<std::size_t>(axis)];
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  if (numel() != 1) throw std::invalid_argument("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

template <typename Scalar>
Tensor<Scalar>& Tensor<Scalar>::set_requires_grad(bool flag) {
  node_->requires_grad = flag;
  return *this;
}

template <typename Scalar>
Array<Scalar> Tensor<Scalar>::grad() const {
  if (has_grad()) return node_->grad;
  return Array<Scalar>::Zero(numel());
}

template <typename Scalar>
ConstMatrixMap<Scalar> Tensor<Scalar>::matrix() const {
  const Index cols = node_->shape.back();
  return ConstMatrixMap<Scalar>(node_->value.data(), numel() / cols, cols);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::detach() const {
  auto node = std::make_shared<Node<Scalar>>();
  node->shape = node_->shape;
  node->value = node_->value;
  return Tensor(std::move(node));
}

template <typename Scalar>
Tensor<Scalar> make_result(Shape shape, Array<Scalar> value, std::vector<std::shared_ptr<Node<Scalar>>> parents,
                           std::function<void(Node<Scalar>&)> backward_fn) {
  if (g_finite_checks && !value.allFinite()) {
    throw NumericError("non-finite value produced for tensor of shape " + shape_string(shape));
  }
  auto node = std::make_shared<Node<Scalar>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) needs = needs || (p && p->requires_grad);
  }
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor<Scalar>(std::move(node));
}

template <typename Scalar>
void backward(const Tensor<Scalar>& root) {
  if (root.numel() != 1) {
    throw std::invalid_argument("backward() needs a scalar root, got shape " + shape_string(root.shape()));
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (parents before children).
  using NodeT = Node<Scalar>;
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> visited;
  std::vector<std::pair<NodeT*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodeT* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()[0] += Scalar(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* node = *it;
    if (node->backward_fn && node->grad.size() == node->value.size()) node->backward_fn(*node);
  }
  // Only leaves keep gradients, so a second backward over the same graph adds exactly one more copy.
  for (NodeT* node : order)
    if (node->backward_fn) node->grad.resize(0);
}

template class Tensor<double>;
template class Tensor<float>;
template Tensor<double> make_result(Shape, Array<double>, std::vector<std::shared_ptr<Node<double>>>,
                                    std::function<void(Node<double>&)>);
template Tensor<float> make_result(Shape, Array<float>, std::vector<std::shared_ptr<Node<float>>>,
                                   std::function<void(Node<float>&)>);
template void backward(const Tensor<double>&);
template void backward(const Tensor<float>&);

}  // namespace grit::ad
