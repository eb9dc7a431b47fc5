#include "grit/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace grit::ad {

namespace {

template <typename Scalar>
using NodeT = Node<Scalar>;

template <typename Scalar>
void accumulate(const std::shared_ptr<NodeT<Scalar>>& parent, const Array<Scalar>& g) {
  if (parent->requires_grad) parent->grad_buffer() += g;
}

int normalize_axis(int axis, int rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw std::out_of_range("axis out of range");
  return axis;
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// Bias-style broadcasting between a and b: the "small" operand repeats along
// the leading axes of the "big" one.
struct Broadcast {
  Shape out_shape;
  Index n = 0;
  Index na = 0;
  Index nb = 0;
};

template <typename Scalar>
Broadcast broadcast_plan(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* op) {
  Broadcast plan;
  plan.na = a.numel();
  plan.nb = b.numel();
  if (a.shape() == b.shape() || plan.nb == 1 || is_suffix(b.shape(), a.shape())) {
    plan.out_shape = a.shape();
  } else if (plan.na == 1 || is_suffix(a.shape(), b.shape())) {
    plan.out_shape = b.shape();
  } else {
    throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) + " and " +
                                shape_string(b.shape()));
  }
  plan.n = numel(plan.out_shape);
  return plan;
}

// View of a flat array as (n / width) x width, row-major, so that an operand of
// `width` elements broadcasts rowwise.
template <typename Scalar>
Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> rows_view(
    const Array<Scalar>& a, Index width) {
  return {a.data(), a.size() / width, width};
}

// Reduces a full-size gradient onto an operand of `count` elements.
template <typename Scalar>
Array<Scalar> reduce_to(const Array<Scalar>& g, Index count) {
  if (g.size() == count) return g;
  Array<Scalar> out = rows_view<Scalar>(g, count).colwise().sum().transpose();
  return out;
}

// Expands an operand of `count` elements to `n` elements.
template <typename Scalar>
Array<Scalar> expand_to(const Array<Scalar>& x, Index n) {
  if (x.size() == n) return x;
  Array<Scalar> out(n);
  const Index c = x.size();
  for (Index r = 0; r < n / c; ++r) out.segment(r * c, c) = x;
  return out;
}

template <typename Scalar>
void gemm_rows(const Scalar* __restrict a, const Scalar* __restrict b, const Scalar* __restrict bias,
               Scalar* __restrict c, Index m, Index k, Index n) {
  for (Index i = 0; i < m; ++i) {
    Scalar* __restrict ci = c + i * n;
    if (bias) {
      for (Index j = 0; j < n; ++j) ci[j] = bias[j];
    } else {
      for (Index j = 0; j < n; ++j) ci[j] = Scalar(0);
    }
    const Scalar* ai = a + i * k;
    for (Index p = 0; p < k; ++p) {
      const Scalar av = ai[p];
      const Scalar* __restrict bp = b + p * n;
      for (Index j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

struct AxisSplit {
  Index outer = 1;
  Index len = 1;
  Index inner = 1;
};

AxisSplit split_axis(const Shape& shape, int axis) {
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  s.len = shape[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

std::vector<Index> strides_of(const Shape& shape) {
  std::vector<Index> strides(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) {
    strides[static_cast<std::size_t>(i)] = strides[static_cast<std::size_t>(i) + 1] * shape[static_cast<std::size_t>(i) + 1];
  }
  return strides;
}

template <typename Scalar, typename Fwd, typename Deriv>
Tensor<Scalar> unary(const Tensor<Scalar>& x, Fwd fwd, Deriv deriv) {
  Array<Scalar> out = x.values().unaryExpr(fwd);
  return make_result<Scalar>(x.shape(), std::move(out), {x.node()}, [deriv](NodeT<Scalar>& self) {
    const auto& px = self.parents[0];
    if (!px->requires_grad) return;
    Array<Scalar> g(self.value.size());
    for (Index i = 0; i < g.size(); ++i) g[i] = self.grad[i] * deriv(px->value[i], self.value[i]);
    px->grad_buffer() += g;
  });
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  const Broadcast plan = broadcast_plan(a, b, "add");
  Array<Scalar> out = expand_to(a.values(), plan.n) + expand_to(b.values(), plan.n);
  const Index na = plan.na, nb = plan.nb;
  return make_result<Scalar>(plan.out_shape, std::move(out), {a.node(), b.node()},
                             [na, nb](NodeT<Scalar>& self) {
                               accumulate(self.parents[0], reduce_to(self.grad, na));
                               accumulate(self.parents[1], reduce_to(self.grad, nb));
                             });
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  const Broadcast plan = broadcast_plan(a, b, "sub");
  Array<Scalar> out = expand_to(a.values(), plan.n) - expand_to(b.values(), plan.n);
  const Index na = plan.na, nb = plan.nb;
  return make_result<Scalar>(plan.out_shape, std::move(out), {a.node(), b.node()},
                             [na, nb](NodeT<Scalar>& self) {
                               accumulate(self.parents[0], reduce_to(self.grad, na));
                               if (self.parents[1]->requires_grad) {
                                 self.parents[1]->grad_buffer() -= reduce_to(self.grad, nb);
                               }
                             });
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  const Broadcast plan = broadcast_plan(a, b, "mul");
  Array<Scalar> out = expand_to(a.values(), plan.n) * expand_to(b.values(), plan.n);
  const Index n = plan.n, na = plan.na, nb = plan.nb;
  return make_result<Scalar>(plan.out_shape, std::move(out), {a.node(), b.node()},
                             [n, na, nb](NodeT<Scalar>& self) {
                               const auto& pa = self.parents[0];
                               const auto& pb = self.parents[1];
                               if (pa->requires_grad) {
                                 pa->grad_buffer() += reduce_to<Scalar>(self.grad * expand_to(pb->value, n), na);
                               }
                               if (pb->requires_grad) {
                                 pb->grad_buffer() += reduce_to<Scalar>(self.grad * expand_to(pa->value, n), nb);
                               }
                             });
}

template <typename Scalar>
Tensor<Scalar> div(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  const Broadcast plan = broadcast_plan(a, b, "div");
  Array<Scalar> out = expand_to(a.values(), plan.n) / expand_to(b.values(), plan.n);
  const Index n = plan.n, na = plan.na, nb = plan.nb;
  return make_result<Scalar>(plan.out_shape, std::move(out), {a.node(), b.node()},
                             [n, na, nb](NodeT<Scalar>& self) {
                               const auto& pa = self.parents[0];
                               const auto& pb = self.parents[1];
                               const Array<Scalar> bv = expand_to(pb->value, n);
                               if (pa->requires_grad) pa->grad_buffer() += reduce_to<Scalar>(self.grad / bv, na);
                               if (pb->requires_grad) {
                                 pb->grad_buffer() -= reduce_to<Scalar>(self.grad * self.value / bv, nb);
                               }
                             });
}

namespace {
template <typename Scalar, bool TakeMin>
Tensor<Scalar> select_extreme(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("minimum/maximum need equal shapes");
  const Index n = a.numel();
  Array<Scalar> out(n);
  std::vector<std::uint8_t> from_a(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const Scalar x = a.values()[i], y = b.values()[i];
    const bool pick_a = TakeMin ? !(y < x) : !(y > x);
    from_a[static_cast<std::size_t>(i)] = pick_a;
    out[i] = pick_a ? x : y;
  }
  return make_result<Scalar>(a.shape(), std::move(out), {a.node(), b.node()},
                             [from_a = std::move(from_a)](NodeT<Scalar>& self) {
                               const auto& pa = self.parents[0];
                               const auto& pb = self.parents[1];
                               const Index n = self.value.size();
                               if (pa->requires_grad) {
                                 auto& g = pa->grad_buffer();
                                 for (Index i = 0; i < n; ++i) if (from_a[static_cast<std::size_t>(i)]) g[i] += self.grad[i];
                               }
                               if (pb->requires_grad) {
                                 auto& g = pb->grad_buffer();
                                 for (Index i = 0; i < n; ++i) if (!from_a[static_cast<std::size_t>(i)]) g[i] += self.grad[i];
                               }
                             });
}
}  // namespace

template <typename Scalar>
Tensor<Scalar> minimum(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return select_extreme<Scalar, true>(a, b);
}

template <typename Scalar>
Tensor<Scalar> maximum(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return select_extreme<Scalar, false>(a, b);
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor) {
  return make_result<Scalar>(a.shape(), a.values() * factor, {a.node()}, [factor](NodeT<Scalar>& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->grad_buffer() += self.grad * factor;
  });
}

template <typename Scalar>
Tensor<Scalar> add_scalar(const Tensor<Scalar>& a, Scalar offset) {
  return make_result<Scalar>(a.shape(), a.values() + offset, {a.node()}, [](NodeT<Scalar>& self) {
    accumulate(self.parents[0], self.grad);
  });
}

template <typename Scalar>
Tensor<Scalar> clamp_min(const Tensor<Scalar>& a, Scalar floor) {
  return unary<Scalar>(
      a, [floor](Scalar x) { return x < floor ? floor : x; },
      [floor](Scalar x, Scalar) { return x < floor ? Scalar(0) : Scalar(1); });
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
  return unary<Scalar>(
      x, [](Scalar v) { return v > Scalar(0) ? v : Scalar(0); },
      [](Scalar v, Scalar) { return v > Scalar(0) ? Scalar(1) : Scalar(0); });
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x) {
  return unary<Scalar>(
      x,
      [](Scalar v) {
        if (v >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-v));
        const Scalar e = std::exp(v);
        return e / (Scalar(1) + e);
      },
      [](Scalar, Scalar y) { return y * (Scalar(1) - y); });
}

template <typename Scalar>
Tensor<Scalar> exp(const Tensor<Scalar>& x) {
  return unary<Scalar>(
      x, [](Scalar v) { return std::exp(v); }, [](Scalar, Scalar y) { return y; });
}

template <typename Scalar>
Tensor<Scalar> log(const Tensor<Scalar>& x) {
  return unary<Scalar>(
      x, [](Scalar v) { return std::log(v); }, [](Scalar v, Scalar) { return Scalar(1) / v; });
}

template <typename Scalar>
Tensor<Scalar> abs(const Tensor<Scalar>& x) {
  return unary<Scalar>(
      x, [](Scalar v) { return std::abs(v); },
      [](Scalar v, Scalar) { return v > Scalar(0) ? Scalar(1) : (v < Scalar(0) ? Scalar(-1) : Scalar(0)); });
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x) {
  Array<Scalar> out(1);
  out[0] = x.values().sum();
  return make_result<Scalar>({1}, std::move(out), {x.node()}, [](NodeT<Scalar>& self) {
    const auto& p = self.parents[0];
    if (p->requires_grad) p->grad_buffer() += self.grad[0];
  });
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& x) {
  return scale(sum(x), Scalar(1) / static_cast<Scalar>(x.numel()));
}

template <typename Scalar>
Tensor<Scalar> sum_last(const Tensor<Scalar>& x) {
  const Index width = x.shape().back();
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  Array<Scalar> out = rows_view<Scalar>(x.values(), width).rowwise().sum();
  return make_result<Scalar>(out_shape, std::move(out), {x.node()}, [width](NodeT<Scalar>& self) {
    const auto& p = self.parents[0];
    if (!p->requires_grad) return;
    auto& g = p->grad_buffer();
    for (Index r = 0; r < self.grad.size(); ++r) g.segment(r * width, width) += self.grad[r];
  });
}

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rank() < 2 || b.rank() < 2) throw std::invalid_argument("matmul needs rank >= 2 operands");
  const Index k = a.shape().back();
  const Index m = a.dim(-2);
  const Index n = b.shape().back();
  if (b.dim(-2) != k) {
    throw std::invalid_argument("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                                shape_string(b.shape()));
  }
  Shape out_shape = a.shape();
  out_shape.back() = n;
  if (b.rank() == 2) {
    const Index rows = a.numel() / k;
    Array<Scalar> out(rows * n);
    gemm_rows<Scalar>(a.values().data(), b.values().data(), nullptr, out.data(), rows, k, n);
    return make_result<Scalar>(out_shape, std::move(out), {a.node(), b.node()},
                               [rows, k, n](NodeT<Scalar>& self) {
                                 const auto& pa = self.parents[0];
                                 const auto& pb = self.parents[1];
                                 ConstMatrixMap<Scalar> g(self.grad.data(), rows, n);
                                 if (pa->requires_grad) {
                                   MatrixMap<Scalar> ga(pa->grad_buffer().data(), rows, k);
                                   ga.noalias() += g * ConstMatrixMap<Scalar>(pb->value.data(), k, n).transpose();
                                 }
                                 if (pb->requires_grad) {
                                   MatrixMap<Scalar> gb(pb->grad_buffer().data(), k, n);
                                   gb.noalias() += ConstMatrixMap<Scalar>(pa->value.data(), rows, k).transpose() * g;
                                 }
                               });
  }
  if (!std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin(), b.shape().end() - 2) ||
      a.rank() != b.rank()) {
    throw std::invalid_argument("batched matmul: leading axes differ " + shape_string(a.shape()) + " x " +
                                shape_string(b.shape()));
  }
  const Index batch = a.numel() / (m * k);
  Array<Scalar> out(batch * m * n);
  for (Index t = 0; t < batch; ++t) {
    gemm_rows<Scalar>(a.values().data() + t * m * k, b.values().data() + t * k * n, nullptr,
                      out.data() + t * m * n, m, k, n);
  }
  return make_result<Scalar>(out_shape, std::move(out), {a.node(), b.node()},
                             [batch, m, k, n](NodeT<Scalar>& self) {
                               const auto& pa = self.parents[0];
                               const auto& pb = self.parents[1];
                               for (Index t = 0; t < batch; ++t) {
                                 ConstMatrixMap<Scalar> g(self.grad.data() + t * m * n, m, n);
                                 if (pa->requires_grad) {
                                   MatrixMap<Scalar> ga(pa->grad_buffer().data() + t * m * k, m, k);
                                   ga.noalias() +=
                                       g * ConstMatrixMap<Scalar>(pb->value.data() + t * k * n, k, n).transpose();
                                 }
                                 if (pb->requires_grad) {
                                   MatrixMap<Scalar> gb(pb->grad_buffer().data() + t * k * n, k, n);
                                   gb.noalias() +=
                                       ConstMatrixMap<Scalar>(pa->value.data() + t * m * k, m, k).transpose() * g;
                                 }
                               }
                             });
}

template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias) {
  if (weight.rank() != 2 || x.shape().back() != weight.dim(0)) {
    throw std::invalid_argument("linear: input " + shape_string(x.shape()) + " does not fit weight " +
                                shape_string(weight.shape()));
  }
  const Index k = weight.dim(0);
  const Index n = weight.dim(1);
  if (bias.defined() && bias.numel() != n) throw std::invalid_argument("linear: bias width mismatch");
  const Index rows = x.numel() / k;
  Shape out_shape = x.shape();
  out_shape.back() = n;
  Array<Scalar> out(rows * n);
  gemm_rows<Scalar>(x.values().data(), weight.values().data(), bias.defined() ? bias.values().data() : nullptr,
                    out.data(), rows, k, n);
  std::vector<std::shared_ptr<NodeT<Scalar>>> parents{x.node(), weight.node()};
  if (bias.defined()) parents.push_back(bias.node());
  return make_result<Scalar>(out_shape, std::move(out), std::move(parents), [rows, k, n](NodeT<Scalar>& self) {
    const auto& px = self.parents[0];
    const auto& pw = self.parents[1];
    ConstMatrixMap<Scalar> g(self.grad.data(), rows, n);
    if (px->requires_grad) {
      MatrixMap<Scalar> gx(px->grad_buffer().data(), rows, k);
      gx.noalias() += g * ConstMatrixMap<Scalar>(pw->value.data(), k, n).transpose();
    }
    if (pw->requires_grad) {
      MatrixMap<Scalar> gw(pw->grad_buffer().data(), k, n);
      gw.noalias() += ConstMatrixMap<Scalar>(px->value.data(), rows, k).transpose() * g;
    }
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      self.parents[2]->grad_buffer() += g.colwise().sum().transpose().array();
    }
  });
}

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, const Shape& shape) {
  if (numel(shape) != x.numel()) {
    throw std::invalid_argument("reshape " + shape_string(x.shape()) + " -> " + shape_string(shape));
  }
  return make_result<Scalar>(shape, x.values(), {x.node()},
                             [](NodeT<Scalar>& self) { accumulate(self.parents[0], self.grad); });
}

template <typename Scalar>
Tensor<Scalar> gather(const Tensor<Scalar>& x, const std::vector<Index>& indices, const Shape& shape) {
  const Index n = numel(shape);
  if (static_cast<Index>(indices.size()) != n) throw std::invalid_argument("gather: index count != shape size");
  const Index limit = x.numel();
  Array<Scalar> out(n);
  for (Index i = 0; i < n; ++i) {
    const Index src = indices[static_cast<std::size_t>(i)];
    if (src >= limit) throw std::out_of_range("gather index out of range");
    out[i] = src >= 0 ? x.values()[src] : Scalar(0);
  }
  return make_result<Scalar>(shape, std::move(out), {x.node()}, [indices](NodeT<Scalar>& self) {
    const auto& p = self.parents[0];
    if (!p->requires_grad) return;
    auto& g = p->grad_buffer();
    for (std::size_t i = 0; i < indices.size(); ++i) {
      if (indices[i] >= 0) g[indices[i]] += self.grad[static_cast<Index>(i)];
    }
  });
}

template <typename Scalar>
Tensor<Scalar> permute(const Tensor<Scalar>& x, const std::vector<int>& axes) {
  const int r = x.rank();
  if (static_cast<int>(axes.size()) != r) throw std::invalid_argument("permute: axis count mismatch");
  Shape out_shape(static_cast<std::size_t>(r));
  const auto in_strides = strides_of(x.shape());
  std::vector<Index> strides(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    out_shape[static_cast<std::size_t>(i)] = x.shape()[static_cast<std::size_t>(axes[static_cast<std::size_t>(i)])];
    strides[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(axes[static_cast<std::size_t>(i)])];
  }
  const Index n = x.numel();
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::vector<Index> counter(static_cast<std::size_t>(r), 0);
  Index src = 0;
  for (Index i = 0; i < n; ++i) {
    idx[static_cast<std::size_t>(i)] = src;
    for (int d = r - 1; d >= 0; --d) {
      auto du = static_cast<std::size_t>(d);
      if (++counter[du] < out_shape[du]) {
        src += strides[du];
        break;
      }
      src -= strides[du] * (out_shape[du] - 1);
      counter[du] = 0;
    }
  }
  return gather(x, idx, out_shape);
}

template <typename Scalar>
Tensor<Scalar> broadcast_to(const Tensor<Scalar>& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  const int r = static_cast<int>(shape.size());
  const int xr = x.rank();
  if (xr > r) throw std::invalid_argument("broadcast_to: target rank too small");
  const auto in_strides = strides_of(x.shape());
  std::vector<Index> strides(static_cast<std::size_t>(r), 0);
  for (int i = 0; i < xr; ++i) {
    const auto src_axis = static_cast<std::size_t>(i);
    const auto dst_axis = static_cast<std::size_t>(r - xr + i);
    if (x.shape()[src_axis] == shape[dst_axis]) {
      strides[dst_axis] = in_strides[src_axis];
    } else if (x.shape()[src_axis] != 1) {
      throw std::invalid_argument("broadcast_to: " + shape_string(x.shape()) + " -> " + shape_string(shape));
    }
  }
  const Index n = numel(shape);
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::vector<Index> counter(static_cast<std::size_t>(r), 0);
  Index src = 0;
  for (Index i = 0; i < n; ++i) {
    idx[static_cast<std::size_t>(i)] = src;
    for (int d = r - 1; d >= 0; --d) {
      auto du = static_cast<std::size_t>(d);
      if (++counter[du] < shape[du]) {
        src += strides[du];
        break;
      }
      src -= strides[du] * (shape[du] - 1);
      counter[du] = 0;
    }
  }
  return gather(x, idx, shape);
}

template <typename Scalar>
Tensor<Scalar> concat(const std::vector<Tensor<Scalar>>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat of nothing");
  const int r = parts[0].rank();
  axis = normalize_axis(axis, r);
  Shape out_shape = parts[0].shape();
  out_shape[static_cast<std::size_t>(axis)] = 0;
  for (const auto& p : parts) {
    if (p.rank() != r) throw std::invalid_argument("concat: rank mismatch");
    for (int d = 0; d < r; ++d) {
      if (d != axis && p.shape()[static_cast<std::size_t>(d)] != parts[0].shape()[static_cast<std::size_t>(d)]) {
        throw std::invalid_argument("concat: shape mismatch " + shape_string(p.shape()) + " vs " +
                                    shape_string(parts[0].shape()));
      }
    }
    out_shape[static_cast<std::size_t>(axis)] += p.shape()[static_cast<std::size_t>(axis)];
  }
  const AxisSplit total = split_axis(out_shape, axis);
  Array<Scalar> out(numel(out_shape));
  std::vector<Index> chunk(parts.size());
  std::vector<std::shared_ptr<NodeT<Scalar>>> parents;
  Index offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const Index c = parts[pi].shape()[static_cast<std::size_t>(axis)] * total.inner;
    chunk[pi] = c;
    for (Index o = 0; o < total.outer; ++o) {
      out.segment(o * total.len * total.inner + offset, c) = parts[pi].values().segment(o * c, c);
    }
    offset += c;
    parents.push_back(parts[pi].node());
  }
  const Index row = total.len * total.inner;
  const Index outer = total.outer;
  return make_result<Scalar>(out_shape, std::move(out), std::move(parents), [chunk, row, outer](NodeT<Scalar>& self) {
    Index offset = 0;
    for (std::size_t pi = 0; pi < chunk.size(); ++pi) {
      const auto& p = self.parents[pi];
      const Index c = chunk[pi];
      if (p->requires_grad) {
        auto& g = p->grad_buffer();
        for (Index o = 0; o < outer; ++o) g.segment(o * c, c) += self.grad.segment(o * row + offset, c);
      }
      offset += c;
    }
  });
}

template <typename Scalar>
Tensor<Scalar> slice(const Tensor<Scalar>& x, int axis, Index start, Index length) {
  axis = normalize_axis(axis, x.rank());
  const AxisSplit s = split_axis(x.shape(), axis);
  if (start < 0 || length <= 0 || start + length > s.len) throw std::out_of_range("slice out of range");
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(axis)] = length;
  const Index c = length * s.inner;
  const Index row = s.len * s.inner;
  const Index off = start * s.inner;
  const Index outer = s.outer;
  Array<Scalar> out(outer * c);
  for (Index o = 0; o < outer; ++o) out.segment(o * c, c) = x.values().segment(o * row + off, c);
  return make_result<Scalar>(out_shape, std::move(out), {x.node()}, [c, row, off, outer](NodeT<Scalar>& self) {
    const auto& p = self.parents[0];
    if (!p->requires_grad) return;
    auto& g = p->grad_buffer();
    for (Index o = 0; o < outer; ++o) g.segment(o * row + off, c) += self.grad.segment(o * c, c);
  });
}

template <typename Scalar>
Tensor<Scalar> embedding(const Tensor<Scalar>& table, const std::vector<Index>& ids, const Shape& ids_shape) {
  if (table.rank() != 2) throw std::invalid_argument("embedding table must be rank 2");
  const Index vocab = table.dim(0);
  const Index width = table.dim(1);
  if (static_cast<Index>(ids.size()) != numel(ids_shape)) throw std::invalid_argument("embedding: id count mismatch");
  Array<Scalar> out(static_cast<Index>(ids.size()) * width);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || ids[r] >= vocab) {
      throw std::out_of_range("embedding id " + std::to_string(ids[r]) + " outside vocabulary of " +
                              std::to_string(vocab));
    }
    out.segment(static_cast<Index>(r) * width, width) = table.values().segment(ids[r] * width, width);
  }
  Shape out_shape = ids_shape;
  out_shape.push_back(width);
  return make_result<Scalar>(out_shape, std::move(out), {table.node()}, [ids, width](NodeT<Scalar>& self) {
    const auto& p = self.parents[0];
    if (!p->requires_grad) return;
    auto& g = p->grad_buffer();
    for (std::size_t r = 0; r < ids.size(); ++r) {
      g.segment(ids[r] * width, width) += self.grad.segment(static_cast<Index>(r) * width, width);
    }
  });
}

template <typename Scalar>
Tensor<Scalar> gather_rows(const Tensor<Scalar>& x, const std::vector<Index>& rows, const Shape& leading) {
  const Index width = x.shape().back();
  const Index limit = x.numel() / width;
  if (static_cast<Index>(rows.size()) != numel(leading)) throw std::invalid_argument("gather_rows: row count mismatch");
  Array<Scalar> out(static_cast<Index>(rows.size()) * width);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Index src = rows[r];
    if (src >= limit) throw std::out_of_range("gather_rows index out of range");
    if (src < 0) {
      out.segment(static_cast<Index>(r) * width, width).setZero();
    } else {
      out.segment(static_cast<Index>(r) * width, width) = x.values().segment(src * width, width);
    }
  }
  Shape out_shape = leading;
  out_shape.push_back(width);
  return make_result<Scalar>(out_shape, std::move(out), {x.node()}, [rows, width](NodeT<Scalar>& self) {
    const auto& p = self.parents[0];
    if (!p->requires_grad) return;
    auto& g = p->grad_buffer();
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r] >= 0) g.segment(rows[r] * width, width) += self.grad.segment(static_cast<Index>(r) * width, width);
    }
  });
}

template <typename Scalar>
Tensor<Scalar> pick(const Tensor<Scalar>& x, const std::vector<Index>& indices) {
  const Index width = x.shape().back();
  const Index rows = x.numel() / width;
  if (static_cast<Index>(indices.size()) != rows) throw std::invalid_argument("pick: one index per row required");
  std::vector<Index> flat(indices.size());
  for (Index r = 0; r < rows; ++r) {
    const Index c = indices[static_cast<std::size_t>(r)];
    if (c < 0 || c >= width) throw std::out_of_range("pick index out of range");
    flat[static_cast<std::size_t>(r)] = r * width + c;
  }
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  return gather(x, flat, out_shape);
}

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x, int axis) {
  axis = normalize_axis(axis, x.rank());
  const AxisSplit s = split_axis(x.shape(), axis);
  Array<Scalar> out(x.numel());
  const Scalar* in = x.values().data();
  for (Index o = 0; o < s.outer; ++o) {
    for (Index i = 0; i < s.inner; ++i) {
      const Index base = o * s.len * s.inner + i;
      Scalar mx = -std::numeric_limits<Scalar>::infinity();
      for (Index j = 0; j < s.len; ++j) mx = std::max(mx, in[base + j * s.inner]);
      Scalar total = 0;
      for (Index j = 0; j < s.len; ++j) {
        const Scalar e = std::exp(in[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        total += e;
      }
      for (Index j = 0; j < s.len; ++j) out[base + j * s.inner] /= total;
    }
  }
  return make_result<Scalar>(x.shape(), std::move(out), {x.node()}, [s](NodeT<Scalar>& self) {
    const auto& p = self.parents[0];
    if (!p->requires_grad) return;
    auto& g = p->grad_buffer();
    for (Index o = 0; o < s.outer; ++o) {
      for (Index i = 0; i < s.inner; ++i) {
        const Index base = o * s.len * s.inner + i;
        Scalar dot = 0;
        for (Index j = 0; j < s.len; ++j) dot += self.grad[base + j * s.inner] * self.value[base + j * s.inner];
        for (Index j = 0; j < s.len; ++j) {
          const Index at = base + j * s.inner;
          g[at] += self.value[at] * (self.grad[at] - dot);
        }
      }
    }
  });
}

template <typename Scalar>
Tensor<Scalar> log_softmax(const Tensor<Scalar>& x, int axis) {
  axis = normalize_axis(axis, x.rank());
  const AxisSplit s = split_axis(x.shape(), axis);
  Array<Scalar> out(x.numel());
  const Scalar* in = x.values().data();
  for (Index o = 0; o < s.outer; ++o) {
    for (Index i = 0; i < s.inner; ++i) {
      const Index base = o * s.len * s.inner + i;
      Scalar mx = -std::numeric_limits<Scalar>::infinity();
      for (Index j = 0; j < s.len; ++j) mx = std::max(mx, in[base + j * s.inner]);
      Scalar total = 0;
      for (Index j = 0; j < s.len; ++j) total += std::exp(in[base + j * s.inner] - mx);
      const Scalar lse = mx + std::log(total);
      for (Index j = 0; j < s.len; ++j) out[base + j * s.inner] = in[base + j * s.inner] - lse;
    }
  }
  return make_result<Scalar>(x.shape(), std::move(out), {x.node()}, [s](NodeT<Scalar>& self) {
    const auto& p = self.parents[0];
    if (!p->requires_grad) return;
    auto& g = p->grad_buffer();
    for (Index o = 0; o < s.outer; ++o) {
      for (Index i = 0; i < s.inner; ++i) {
        const Index base = o * s.len * s.inner + i;
        Scalar total = 0;
        for (Index j = 0; j < s.len; ++j) total += self.grad[base + j * s.inner];
        for (Index j = 0; j < s.len; ++j) {
          const Index at = base + j * s.inner;
          g[at] += self.grad[at] - std::exp(self.value[at]) * total;
        }
      }
    }
  });
}

template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gain, const Tensor<Scalar>& bias,
                          Scalar eps) {
  const Index width = x.shape().back();
  if (width < 2) throw std::invalid_argument("layer_norm needs a last axis of size >= 2");
  if (gain.numel() != width || bias.numel() != width) throw std::invalid_argument("layer_norm: gain/bias width");
  const Index rows = x.numel() / width;
  Array<Scalar> out(x.numel());
  Array<Scalar> normalized(x.numel());
  Array<Scalar> inv_std(rows);
  const Scalar* in = x.values().data();
  const Scalar* gv = gain.values().data();
  const Scalar* bv = bias.values().data();
  for (Index r = 0; r < rows; ++r) {
    const Scalar* row = in + r * width;
    Scalar mu = 0;
    for (Index j = 0; j < width; ++j) mu += row[j];
    mu /= static_cast<Scalar>(width);
    Scalar var = 0;
    for (Index j = 0; j < width; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<Scalar>(width);
    const Scalar is = Scalar(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (Index j = 0; j < width; ++j) {
      const Scalar xh = (row[j] - mu) * is;
      normalized[r * width + j] = xh;
      out[r * width + j] = xh * gv[j] + bv[j];
    }
  }
  return make_result<Scalar>(
      x.shape(), std::move(out), {x.node(), gain.node(), bias.node()},
      [normalized = std::move(normalized), inv_std = std::move(inv_std), rows, width](NodeT<Scalar>& self) {
        const auto& px = self.parents[0];
        const auto& pg = self.parents[1];
        const auto& pb = self.parents[2];
        const Scalar* gv = pg->value.data();
        if (pg->requires_grad || pb->requires_grad) {
          Array<Scalar> dg = Array<Scalar>::Zero(width);
          Array<Scalar> db = Array<Scalar>::Zero(width);
          for (Index r = 0; r < rows; ++r) {
            for (Index j = 0; j < width; ++j) {
              dg[j] += self.grad[r * width + j] * normalized[r * width + j];
              db[j] += self.grad[r * width + j];
            }
          }
          if (pg->requires_grad) pg->grad_buffer() += dg;
          if (pb->requires_grad) pb->grad_buffer() += db;
        }
        if (!px->requires_grad) return;
        auto& gx = px->grad_buffer();
        for (Index r = 0; r < rows; ++r) {
          Scalar mean_d = 0, mean_dx = 0;
          for (Index j = 0; j < width; ++j) {
            const Scalar d = self.grad[r * width + j] * gv[j];
            mean_d += d;
            mean_dx += d * normalized[r * width + j];
          }
          mean_d /= static_cast<Scalar>(width);
          mean_dx /= static_cast<Scalar>(width);
          for (Index j = 0; j < width; ++j) {
            const Scalar d = self.grad[r * width + j] * gv[j];
            gx[r * width + j] += inv_std[r] * (d - mean_d - normalized[r * width + j] * mean_dx);
          }
        }
      });
}

template <typename Scalar>
Tensor<Scalar> dropout(const Tensor<Scalar>& x, double rate, bool train, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout rate must lie in [0, 1)");
  if (!train || rate == 0.0) return x;
  const Index n = x.numel();
  const Scalar keep_scale = Scalar(1.0 / (1.0 - rate));
  Array<Scalar> mask(n);
  constexpr double kUnit = 1.0 / 9007199254740992.0;  // 2^-53
  for (Index i = 0; i < n; ++i) {
    const double u = static_cast<double>(rng() >> 11) * kUnit;
    mask[i] = u >= rate ? keep_scale : Scalar(0);
  }
  Array<Scalar> out = x.values() * mask;
  return make_result<Scalar>(x.shape(), std::move(out), {x.node()}, [mask = std::move(mask)](NodeT<Scalar>& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->grad_buffer() += self.grad * mask;
  });
}

template <typename Scalar>
Tensor<Scalar> masked_fill(const Tensor<Scalar>& x, const std::vector<std::uint8_t>& mask, Scalar value) {
  if (static_cast<Index>(mask.size()) != x.numel()) throw std::invalid_argument("masked_fill: mask size mismatch");
  Array<Scalar> out = x.values();
  for (Index i = 0; i < out.size(); ++i) if (mask[static_cast<std::size_t>(i)]) out[i] = value;
  return make_result<Scalar>(x.shape(), std::move(out), {x.node()}, [mask](NodeT<Scalar>& self) {
    const auto& p = self.parents[0];
    if (!p->requires_grad) return;
    auto& g = p->grad_buffer();
    for (Index i = 0; i < g.size(); ++i) if (!mask[static_cast<std::size_t>(i)]) g[i] += self.grad[i];
  });
}

namespace {

struct BilinearTap {
  Index offset[4];
  bool valid[4];
  double fx = 0, fy = 0;
  bool inside = false;
};

template <typename Scalar>
BilinearTap bilinear_tap(Scalar px, Scalar py, Index height, Index width) {
  BilinearTap tap{};
  if (!(px >= Scalar(0) && px <= Scalar(1) && py >= Scalar(0) && py <= Scalar(1))) return tap;
  tap.inside = true;
  const double x = static_cast<double>(px) * static_cast<double>(width) - 0.5;
  const double y = static_cast<double>(py) * static_cast<double>(height) - 0.5;
  const auto x0 = static_cast<Index>(std::floor(x));
  const auto y0 = static_cast<Index>(std::floor(y));
  tap.fx = x - static_cast<double>(x0);
  tap.fy = y - static_cast<double>(y0);
  const Index xs[4] = {x0, x0 + 1, x0, x0 + 1};
  const Index ys[4] = {y0, y0, y0 + 1, y0 + 1};
  for (int c = 0; c < 4; ++c) {
    tap.valid[c] = xs[c] >= 0 && xs[c] < width && ys[c] >= 0 && ys[c] < height;
    tap.offset[c] = ys[c] * width + xs[c];
  }
  return tap;
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> bilinear_sample(const Tensor<Scalar>& map, const Tensor<Scalar>& points) {
  if (map.rank() != 5 || points.rank() != 4 || points.dim(3) != 2 || points.dim(0) != map.dim(0) ||
      points.dim(2) != map.dim(3)) {
    throw std::invalid_argument("bilinear_sample: map " + shape_string(map.shape()) + " / points " +
                                shape_string(points.shape()));
  }
  const Index batch = map.dim(0), height = map.dim(1), width = map.dim(2), groups = map.dim(3), ch = map.dim(4);
  const Index count = points.dim(1);
  Array<Scalar> out = Array<Scalar>::Zero(batch * count * groups * ch);
  const Scalar* mv = map.values().data();
  const Scalar* pv = points.values().data();
  for (Index b = 0; b < batch; ++b) {
    for (Index k = 0; k < count; ++k) {
      for (Index g = 0; g < groups; ++g) {
        const Index pidx = ((b * count + k) * groups + g) * 2;
        const BilinearTap tap = bilinear_tap(pv[pidx], pv[pidx + 1], height, width);
        if (!tap.inside) continue;
        const Scalar w[4] = {Scalar((1 - tap.fx) * (1 - tap.fy)), Scalar(tap.fx * (1 - tap.fy)),
                             Scalar((1 - tap.fx) * tap.fy), Scalar(tap.fx * tap.fy)};
        Scalar* dst = out.data() + ((b * count + k) * groups + g) * ch;
        for (int c = 0; c < 4; ++c) {
          if (!tap.valid[c]) continue;
          const Scalar* src = mv + ((b * height * width + tap.offset[c]) * groups + g) * ch;
          for (Index j = 0; j < ch; ++j) dst[j] += w[c] * src[j];
        }
      }
    }
  }
  Shape out_shape{batch, count, groups, ch};
  return make_result<Scalar>(out_shape, std::move(out), {map.node(), points.node()}, [=](NodeT<Scalar>& self) {
    const auto& pm = self.parents[0];
    const auto& pp = self.parents[1];
    const Scalar* mv = pm->value.data();
    const Scalar* pv = pp->value.data();
    Scalar* gm = pm->requires_grad ? pm->grad_buffer().data() : nullptr;
    Scalar* gp = pp->requires_grad ? pp->grad_buffer().data() : nullptr;
    for (Index b = 0; b < batch; ++b) {
      for (Index k = 0; k < count; ++k) {
        for (Index g = 0; g < groups; ++g) {
          const Index pidx = ((b * count + k) * groups + g) * 2;
          const BilinearTap tap = bilinear_tap(pv[pidx], pv[pidx + 1], height, width);
          if (!tap.inside) continue;
          const Scalar* go = self.grad.data() + ((b * count + k) * groups + g) * ch;
          const Scalar w[4] = {Scalar((1 - tap.fx) * (1 - tap.fy)), Scalar(tap.fx * (1 - tap.fy)),
                               Scalar((1 - tap.fx) * tap.fy), Scalar(tap.fx * tap.fy)};
          // d(out)/d(fx) and d(out)/d(fy) weights per corner.
          const Scalar wx[4] = {Scalar(-(1 - tap.fy)), Scalar(1 - tap.fy), Scalar(-tap.fy), Scalar(tap.fy)};
          const Scalar wy[4] = {Scalar(-(1 - tap.fx)), Scalar(-tap.fx), Scalar(1 - tap.fx), Scalar(tap.fx)};
          Scalar dfx = 0, dfy = 0;
          for (int c = 0; c < 4; ++c) {
            if (!tap.valid[c]) continue;
            const Index base = ((b * height * width + tap.offset[c]) * groups + g) * ch;
            Scalar dot = 0;
            for (Index j = 0; j < ch; ++j) {
              dot += go[j] * mv[base + j];
              if (gm) gm[base + j] += w[c] * go[j];
            }
            dfx += wx[c] * dot;
            dfy += wy[c] * dot;
          }
          if (gp) {
            gp[pidx] += dfx * static_cast<Scalar>(width);
            gp[pidx + 1] += dfy * static_cast<Scalar>(height);
          }
        }
      }
    }
  });
}

template <typename Scalar>
Tensor<Scalar> bilinear_sample_single(const Tensor<Scalar>& map, const Tensor<Scalar>& points) {
  if (map.rank() != 3 || points.rank() != 2) throw std::invalid_argument("bilinear_sample_single: rank mismatch");
  const Index h = map.dim(0), w = map.dim(1), c = map.dim(2), k = points.dim(0);
  auto out = bilinear_sample(reshape(map, {1, h, w, 1, c}), reshape(points, {1, k, 1, 2}));
  return reshape(out, {k, c});
}

namespace {

struct AttentionDims {
  Index batch, tq, tk, width, heads, head_dim;
};

template <typename Scalar>
AttentionDims attention_dims(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>* v, int heads) {
  if (q.rank() != 3 || k.rank() != 3) throw std::invalid_argument("attention expects (B, T, D) operands");
  AttentionDims d{q.dim(0), q.dim(1), k.dim(1), q.dim(2), heads, 0};
  if (k.dim(0) != d.batch || k.dim(2) != d.width || (v && v->shape() != k.shape())) {
    throw std::invalid_argument("attention: q " + shape_string(q.shape()) + " k " + shape_string(k.shape()));
  }
  if (heads <= 0 || d.width % heads != 0) throw std::invalid_argument("attention: width not divisible by heads");
  d.head_dim = d.width / heads;
  return d;
}

// Fills probs (Tq x Tk) for one (batch, head); returns false for rows without keys.
template <typename Scalar>
void attention_scores(const Scalar* q, const Scalar* k, const AttentionDims& d, Index b, Index h,
                      const AttentionMask* mask, Scalar* probs) {
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(d.head_dim));
  for (Index i = 0; i < d.tq; ++i) {
    const Scalar* qi = q + (b * d.tq + i) * d.width + h * d.head_dim;
    Scalar* row = probs + i * d.tk;
    Scalar mx = -std::numeric_limits<Scalar>::infinity();
    bool any = false;
    for (Index j = 0; j < d.tk; ++j) {
      if (mask && !mask->permits(b, i, j)) {
        row[j] = Scalar(0);
        continue;
      }
      const Scalar* kj = k + (b * d.tk + j) * d.width + h * d.head_dim;
      Scalar s = 0;
      for (Index c = 0; c < d.head_dim; ++c) s += qi[c] * kj[c];
      row[j] = s * scale;
      mx = any ? std::max(mx, row[j]) : row[j];
      any = true;
    }
    if (!any) continue;
    Scalar total = 0;
    for (Index j = 0; j < d.tk; ++j) {
      if (mask && !mask->permits(b, i, j)) continue;
      row[j] = std::exp(row[j] - mx);
      total += row[j];
    }
    for (Index j = 0; j < d.tk; ++j) {
      if (mask && !mask->permits(b, i, j)) continue;
      row[j] /= total;
    }
  }
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> attention(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& v, int heads,
                         const AttentionMask* mask) {
  const AttentionDims d = attention_dims(q, k, &v, heads);
  const AttentionMask* m = mask;
  Array<Scalar> probs(d.batch * d.heads * d.tq * d.tk);
  Array<Scalar> out = Array<Scalar>::Zero(d.batch * d.tq * d.width);
  const Scalar* qv = q.values().data();
  const Scalar* kv = k.values().data();
  const Scalar* vv = v.values().data();
  for (Index b = 0; b < d.batch; ++b) {
    for (Index h = 0; h < d.heads; ++h) {
      Scalar* p = probs.data() + (b * d.heads + h) * d.tq * d.tk;
      attention_scores(qv, kv, d, b, h, m, p);
      for (Index i = 0; i < d.tq; ++i) {
        Scalar* oi = out.data() + (b * d.tq + i) * d.width + h * d.head_dim;
        for (Index j = 0; j < d.tk; ++j) {
          const Scalar pij = p[i * d.tk + j];
          if (pij == Scalar(0)) continue;
          const Scalar* vj = vv + (b * d.tk + j) * d.width + h * d.head_dim;
          for (Index c = 0; c < d.head_dim; ++c) oi[c] += pij * vj[c];
        }
      }
    }
  }
  return make_result<Scalar>(
      q.shape(), std::move(out), {q.node(), k.node(), v.node()}, [d, probs = std::move(probs)](NodeT<Scalar>& self) {
        const auto& pq = self.parents[0];
        const auto& pk = self.parents[1];
        const auto& pv = self.parents[2];
        const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(d.head_dim));
        using Mat = RowMatrix<Scalar>;
        using Stride = Eigen::OuterStride<>;
        using ConstStrided = Eigen::Map<const Mat, 0, Stride>;
        using Strided = Eigen::Map<Mat, 0, Stride>;
        Scalar* gq = pq->requires_grad ? pq->grad_buffer().data() : nullptr;
        Scalar* gk = pk->requires_grad ? pk->grad_buffer().data() : nullptr;
        Scalar* gv = pv->requires_grad ? pv->grad_buffer().data() : nullptr;
        for (Index b = 0; b < d.batch; ++b) {
          for (Index h = 0; h < d.heads; ++h) {
            const Index col = h * d.head_dim;
            ConstMatrixMap<Scalar> p(probs.data() + (b * d.heads + h) * d.tq * d.tk, d.tq, d.tk);
            ConstStrided go(self.grad.data() + b * d.tq * d.width + col, d.tq, d.head_dim, Stride(d.width));
            ConstStrided qm(pq->value.data() + b * d.tq * d.width + col, d.tq, d.head_dim, Stride(d.width));
            ConstStrided km(pk->value.data() + b * d.tk * d.width + col, d.tk, d.head_dim, Stride(d.width));
            ConstStrided vm(pv->value.data() + b * d.tk * d.width + col, d.tk, d.head_dim, Stride(d.width));
            if (gv) {
              Strided g(gv + b * d.tk * d.width + col, d.tk, d.head_dim, Stride(d.width));
              g.noalias() += p.transpose() * go;
            }
            if (!gq && !gk) continue;
            Mat dp = go * vm.transpose();
            Mat ds = (p.array() * (dp.array().colwise() - (dp.array() * p.array()).rowwise().sum())).matrix();
            ds *= scale;
            if (gq) {
              Strided g(gq + b * d.tq * d.width + col, d.tq, d.head_dim, Stride(d.width));
              g.noalias() += ds * km;
            }
            if (gk) {
              Strided g(gk + b * d.tk * d.width + col, d.tk, d.head_dim, Stride(d.width));
              g.noalias() += ds.transpose() * qm;
            }
          }
        }
      });
}

template <typename Scalar>
Tensor<Scalar> attention_probabilities(const Tensor<Scalar>& q, const Tensor<Scalar>& k, int heads,
                                       const AttentionMask* mask) {
  const AttentionDims d = attention_dims<Scalar>(q, k, nullptr, heads);
  Array<Scalar> probs(d.batch * d.heads * d.tq * d.tk);
  for (Index b = 0; b < d.batch; ++b) {
    for (Index h = 0; h < d.heads; ++h) {
      attention_scores(q.values().data(), k.values().data(), d, b, h, mask,
                       probs.data() + (b * d.heads + h) * d.tq * d.tk);
    }
  }
  return Tensor<Scalar>::from_values({d.batch, d.heads, d.tq, d.tk}, std::move(probs));
}

#define GRIT_INSTANTIATE_OPS(S)                                                                              \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                                \
  template Tensor<S> sub(const Tensor<S>&, const Tensor<S>&);                                                \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                                \
  template Tensor<S> div(const Tensor<S>&, const Tensor<S>&);                                                \
  template Tensor<S> minimum(const Tensor<S>&, const Tensor<S>&);                                            \
  template Tensor<S> maximum(const Tensor<S>&, const Tensor<S>&);                                            \
  template Tensor<S> scale(const Tensor<S>&, S);                                                             \
  template Tensor<S> add_scalar(const Tensor<S>&, S);                                                        \
  template Tensor<S> clamp_min(const Tensor<S>&, S);                                                         \
  template Tensor<S> relu(const Tensor<S>&);                                                                 \
  template Tensor<S> sigmoid(const Tensor<S>&);                                                              \
  template Tensor<S> exp(const Tensor<S>&);                                                                  \
  template Tensor<S> log(const Tensor<S>&);                                                                  \
  template Tensor<S> abs(const Tensor<S>&);                                                                  \
  template Tensor<S> sum(const Tensor<S>&);                                                                  \
  template Tensor<S> mean(const Tensor<S>&);                                                                 \
  template Tensor<S> sum_last(const Tensor<S>&);                                                             \
  template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&);                                             \
  template Tensor<S> linear(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);                           \
  template Tensor<S> reshape(const Tensor<S>&, const Shape&);                                                \
  template Tensor<S> permute(const Tensor<S>&, const std::vector<int>&);                                     \
  template Tensor<S> gather(const Tensor<S>&, const std::vector<Index>&, const Shape&);                      \
  template Tensor<S> gather_rows(const Tensor<S>&, const std::vector<Index>&, const Shape&);                 \
  template Tensor<S> broadcast_to(const Tensor<S>&, const Shape&);                                           \
  template Tensor<S> concat(const std::vector<Tensor<S>>&, int);                                             \
  template Tensor<S> slice(const Tensor<S>&, int, Index, Index);                                             \
  template Tensor<S> embedding(const Tensor<S>&, const std::vector<Index>&, const Shape&);                   \
  template Tensor<S> pick(const Tensor<S>&, const std::vector<Index>&);                                      \
  template Tensor<S> softmax(const Tensor<S>&, int);                                                         \
  template Tensor<S> log_softmax(const Tensor<S>&, int);                                                     \
  template Tensor<S> layer_norm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, S);                    \
  template Tensor<S> dropout(const Tensor<S>&, double, bool, std::mt19937_64&);                              \
  template Tensor<S> masked_fill(const Tensor<S>&, const std::vector<std::uint8_t>&, S);                     \
  template Tensor<S> bilinear_sample(const Tensor<S>&, const Tensor<S>&);                                    \
  template Tensor<S> bilinear_sample_single(const Tensor<S>&, const Tensor<S>&);                             \
  template Tensor<S> attention(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, int,                    \
                               const AttentionMask*);                                                        \
  template Tensor<S> attention_probabilities(const Tensor<S>&, const Tensor<S>&, int, const AttentionMask*);

GRIT_INSTANTIATE_OPS(double)
GRIT_INSTANTIATE_OPS(float)

}  // namespace grit::ad
