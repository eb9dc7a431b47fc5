#pragma once

#include <random>
#include <string>

#include "grit/autodiff/ops.hpp"
#include "grit/autodiff/parameters.hpp"

namespace grit::nn {

using ad::Index;
using ad::Shape;
using ad::Tensor;

/// Per-call forward settings. Dropout draws from `rng` only in train mode.
struct Context {
  bool train = false;
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;

  static Context eval() { return {}; }
};

template <typename Scalar>
Tensor<Scalar> apply_dropout(const Tensor<Scalar>& x, const Context& ctx);

template <typename Scalar>
struct Linear {
  Tensor<Scalar> weight;  // (in, out)
  Tensor<Scalar> bias;    // (out) or undefined

  static Linear create(ad::ParameterSet<Scalar>& ps, const std::string& path, Index in, Index out,
                       bool with_bias = true);
  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const { return ad::linear(x, weight, bias); }
  Index in_features() const { return weight.dim(0); }
  Index out_features() const { return weight.dim(1); }
};

template <typename Scalar>
struct LayerNorm {
  Tensor<Scalar> gain;
  Tensor<Scalar> bias;

  static LayerNorm create(ad::ParameterSet<Scalar>& ps, const std::string& path, Index width);
  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const { return ad::layer_norm(x, gain, bias); }
};

template <typename Scalar>
struct FeedForward {
  Linear<Scalar> expand;
  Linear<Scalar> contract;

  static FeedForward create(ad::ParameterSet<Scalar>& ps, const std::string& path, Index width, Index hidden);
  Tensor<Scalar> operator()(const Tensor<Scalar>& x, const Context& ctx) const;
};

/// Keys and values projected once, reusable across many query batches.
template <typename Scalar>
struct ProjectedMemory {
  Tensor<Scalar> keys;
  Tensor<Scalar> values;
};

template <typename Scalar>
struct MultiHeadAttention {
  Linear<Scalar> q, k, v, out;
  int heads = 1;

  static MultiHeadAttention create(ad::ParameterSet<Scalar>& ps, const std::string& path, Index width, int heads);

  ProjectedMemory<Scalar> project(const Tensor<Scalar>& source) const { return {k(source), v(source)}; }
  /// query: (B, Tq, d); memory from `project` on a (B, Tk, d) source.
  Tensor<Scalar> operator()(const Tensor<Scalar>& query, const ProjectedMemory<Scalar>& memory,
                            const ad::AttentionMask* mask = nullptr) const;
  Tensor<Scalar> operator()(const Tensor<Scalar>& query, const Tensor<Scalar>& source,
                            const ad::AttentionMask* mask = nullptr) const {
    return (*this)(query, project(source), mask);
  }
};

/// Post-norm transformer encoder layer: LN(x + drop(MHA(x))) then LN(y + drop(FFN(y))).
template <typename Scalar>
struct EncoderLayer {
  MultiHeadAttention<Scalar> attn;
  LayerNorm<Scalar> attn_norm;
  FeedForward<Scalar> ffn;
  LayerNorm<Scalar> ffn_norm;

  static EncoderLayer create(ad::ParameterSet<Scalar>& ps, const std::string& path, Index width, int heads,
                             Index hidden);
  Tensor<Scalar> operator()(const Tensor<Scalar>& x, const Context& ctx) const;
};

/// Interleaved sinusoidal table (length, width): even columns sin(p / 10000^(2i/d)),
/// odd columns cos of the same angle.
template <typename Scalar>
Tensor<Scalar> sinusoidal_table(Index length, Index width);

}  // namespace grit::nn
