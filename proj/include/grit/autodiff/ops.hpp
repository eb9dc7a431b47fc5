#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "grit/autodiff/tensor.hpp"

namespace grit::ad {

// Elementwise binary ops. Shapes must match, or the second operand's shape must
// equal a trailing suffix of the first (bias-style broadcasting), or either
// operand may hold a single element.
template <typename Scalar> Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar> Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar> Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar> Tensor<Scalar> div(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
/// Same-shape elementwise min/max; the gradient goes to the selected operand
/// (ties go to the first).
template <typename Scalar> Tensor<Scalar> minimum(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar> Tensor<Scalar> maximum(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar> Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor);
template <typename Scalar> Tensor<Scalar> add_scalar(const Tensor<Scalar>& a, Scalar offset);
template <typename Scalar> Tensor<Scalar> clamp_min(const Tensor<Scalar>& a, Scalar floor);

template <typename Scalar> Tensor<Scalar> relu(const Tensor<Scalar>& x);
template <typename Scalar> Tensor<Scalar> sigmoid(const Tensor<Scalar>& x);
template <typename Scalar> Tensor<Scalar> exp(const Tensor<Scalar>& x);
template <typename Scalar> Tensor<Scalar> log(const Tensor<Scalar>& x);
/// Subgradient 0 at the origin.
template <typename Scalar> Tensor<Scalar> abs(const Tensor<Scalar>& x);

template <typename Scalar> Tensor<Scalar> sum(const Tensor<Scalar>& x);
template <typename Scalar> Tensor<Scalar> mean(const Tensor<Scalar>& x);
/// Sum over the last axis; rank drops by one (a rank-1 input gives shape {1}).
template <typename Scalar> Tensor<Scalar> sum_last(const Tensor<Scalar>& x);

/// a: (..., m, k) times b: (k, n) -> (..., m, n); or, for a batched b with the
/// same leading axes as a, a per-batch product. Forward results for a given
/// output row depend only on that row of a, which makes prefix recomputation
/// bit-stable.
template <typename Scalar> Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
/// x: (..., in), weight: (in, out), bias: (out) or undefined.
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias);

template <typename Scalar> Tensor<Scalar> reshape(const Tensor<Scalar>& x, const Shape& shape);
template <typename Scalar> Tensor<Scalar> permute(const Tensor<Scalar>& x, const std::vector<int>& axes);
/// out.flat[i] = x.flat[indices[i]], or 0 where indices[i] < 0. Backward scatter-adds.
template <typename Scalar>
Tensor<Scalar> gather(const Tensor<Scalar>& x, const std::vector<Index>& indices, const Shape& shape);
/// Treats x as rows of its last axis; output row r copies row rows[r] of x, or
/// zeros where rows[r] < 0. Output shape is leading + (last axis of x).
template <typename Scalar>
Tensor<Scalar> gather_rows(const Tensor<Scalar>& x, const std::vector<Index>& rows, const Shape& leading);
/// Numpy-style broadcast (size-1 axes and missing leading axes expand).
template <typename Scalar> Tensor<Scalar> broadcast_to(const Tensor<Scalar>& x, const Shape& shape);
template <typename Scalar> Tensor<Scalar> concat(const std::vector<Tensor<Scalar>>& parts, int axis);
template <typename Scalar> Tensor<Scalar> slice(const Tensor<Scalar>& x, int axis, Index start, Index length);
/// Row lookup: table (V, d), ids of given shape -> shape + (d).
template <typename Scalar>
Tensor<Scalar> embedding(const Tensor<Scalar>& table, const std::vector<Index>& ids, const Shape& ids_shape);
/// x: (..., V), one index per leading position -> leading shape.
template <typename Scalar> Tensor<Scalar> pick(const Tensor<Scalar>& x, const std::vector<Index>& indices);

/// Max-subtracted softmax along `axis` (negative counts from the end).
template <typename Scalar> Tensor<Scalar> softmax(const Tensor<Scalar>& x, int axis = -1);
template <typename Scalar> Tensor<Scalar> log_softmax(const Tensor<Scalar>& x, int axis = -1);

/// Normalizes over the last axis, then applies gain and bias of that width.
template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gain, const Tensor<Scalar>& bias,
                          Scalar eps = Scalar(1e-5));

/// Inverted dropout: train mode keeps each entry with probability 1-rate and
/// rescales by 1/(1-rate); eval mode is the identity.
template <typename Scalar>
Tensor<Scalar> dropout(const Tensor<Scalar>& x, double rate, bool train, std::mt19937_64& rng);

/// Replaces entries where mask is nonzero with `value`; no gradient flows there.
template <typename Scalar>
Tensor<Scalar> masked_fill(const Tensor<Scalar>& x, const std::vector<std::uint8_t>& mask, Scalar value);

/// map: (B, H, W, G, C), points: (B, K, G, 2) normalized (x, y) -> (B, K, G, C).
/// Cell (i, j) has its center at ((j + 0.5) / W, (i + 0.5) / H). Neighbours
/// outside the map read as zero and points outside [0,1]^2 sample zero.
template <typename Scalar>
Tensor<Scalar> bilinear_sample(const Tensor<Scalar>& map, const Tensor<Scalar>& points);
/// map: (H, W, C), points: (K, 2) -> (K, C).
template <typename Scalar>
Tensor<Scalar> bilinear_sample_single(const Tensor<Scalar>& map, const Tensor<Scalar>& points);

/// Which key positions each query may attend to. For `batch` < B, batch element
/// b uses mask slice b % batch.
struct AttentionMask {
  bool causal = false;
  Index batch = 0;
  Index rows = 0;
  Index cols = 0;
  std::vector<std::uint8_t> allowed;

  static AttentionMask causal_mask() {
    AttentionMask m;
    m.causal = true;
    return m;
  }
  bool permits(Index b, Index i, Index j) const {
    if (causal) return j <= i;
    if (allowed.empty()) return true;
    return allowed[static_cast<std::size_t>(((b % batch) * rows + i) * cols + j)] != 0;
  }
};

/// Scaled dot-product attention with `heads` column groups.
/// q: (B, Tq, D), k and v: (B, Tk, D) -> (B, Tq, D). A query row with no
/// permitted keys yields zeros.
template <typename Scalar>
Tensor<Scalar> attention(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& v,
                         int heads, const AttentionMask* mask = nullptr);

/// The probabilities `attention` would use, shape (B, heads, Tq, Tk). No graph.
template <typename Scalar>
Tensor<Scalar> attention_probabilities(const Tensor<Scalar>& q, const Tensor<Scalar>& k, int heads,
                                       const AttentionMask* mask = nullptr);

template <typename Scalar> Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return add(a, b); }
template <typename Scalar> Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return sub(a, b); }
template <typename Scalar> Tensor<Scalar> operator*(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return mul(a, b); }
template <typename Scalar> Tensor<Scalar> operator/(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return div(a, b); }
template <typename Scalar> Tensor<Scalar> operator-(const Tensor<Scalar>& a) { return scale(a, Scalar(-1)); }
template <typename Scalar> Tensor<Scalar> operator*(const Tensor<Scalar>& a, Scalar s) { return scale(a, s); }
template <typename Scalar> Tensor<Scalar> operator*(Scalar s, const Tensor<Scalar>& a) { return scale(a, s); }
template <typename Scalar> Tensor<Scalar> operator+(const Tensor<Scalar>& a, Scalar s) { return add_scalar(a, s); }
template <typename Scalar> Tensor<Scalar> operator+(Scalar s, const Tensor<Scalar>& a) { return add_scalar(a, s); }
template <typename Scalar> Tensor<Scalar> operator-(Scalar s, const Tensor<Scalar>& a) { return add_scalar(scale(a, Scalar(-1)), s); }

}  // namespace grit::ad
