#include "grit/nn/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace grit::nn {

template <typename Scalar>
Tensor<Scalar> apply_dropout(const Tensor<Scalar>& x, const Context& ctx) {
  if (!ctx.train || ctx.dropout <= 0.0) return x;
  if (!ctx.rng) throw std::logic_error("train-mode dropout needs an rng");
  return ad::dropout(x, ctx.dropout, true, *ctx.rng);
}

template <typename Scalar>
Linear<Scalar> Linear<Scalar>::create(ad::ParameterSet<Scalar>& ps, const std::string& path, Index in, Index out,
                                      bool with_bias) {
  Linear l;
  l.weight = ps.linear_weight(path + "/weight", in, out);
  if (with_bias) l.bias = ps.uniform(path + "/bias", {out}, 1.0 / std::sqrt(static_cast<double>(in)));
  return l;
}

template <typename Scalar>
LayerNorm<Scalar> LayerNorm<Scalar>::create(ad::ParameterSet<Scalar>& ps, const std::string& path, Index width) {
  return {ps.constant(path + "/gain", {width}, 1.0), ps.constant(path + "/bias", {width}, 0.0)};
}

template <typename Scalar>
FeedForward<Scalar> FeedForward<Scalar>::create(ad::ParameterSet<Scalar>& ps, const std::string& path, Index width,
                                                Index hidden) {
  return {Linear<Scalar>::create(ps, path + "/expand", width, hidden),
          Linear<Scalar>::create(ps, path + "/contract", hidden, width)};
}

template <typename Scalar>
Tensor<Scalar> FeedForward<Scalar>::operator()(const Tensor<Scalar>& x, const Context& ctx) const {
  return contract(apply_dropout(ad::relu(expand(x)), ctx));
}

template <typename Scalar>
MultiHeadAttention<Scalar> MultiHeadAttention<Scalar>::create(ad::ParameterSet<Scalar>& ps, const std::string& path,
                                                              Index width, int heads) {
  if (width % heads != 0) throw std::invalid_argument("attention width must divide into heads");
  MultiHeadAttention m;
  m.q = Linear<Scalar>::create(ps, path + "/q", width, width);
  m.k = Linear<Scalar>::create(ps, path + "/k", width, width);
  m.v = Linear<Scalar>::create(ps, path + "/v", width, width);
  m.out = Linear<Scalar>::create(ps, path + "/out", width, width);
  m.heads = heads;
  return m;
}

template <typename Scalar>
Tensor<Scalar> MultiHeadAttention<Scalar>::operator()(const Tensor<Scalar>& query,
                                                      const ProjectedMemory<Scalar>& memory,
                                                      const ad::AttentionMask* mask) const {
  return out(ad::attention(q(query), memory.keys, memory.values, heads, mask));
}

template <typename Scalar>
EncoderLayer<Scalar> EncoderLayer<Scalar>::create(ad::ParameterSet<Scalar>& ps, const std::string& path, Index width,
                                                  int heads, Index hidden) {
  return {MultiHeadAttention<Scalar>::create(ps, path + "/attn", width, heads),
          LayerNorm<Scalar>::create(ps, path + "/attn_norm", width),
          FeedForward<Scalar>::create(ps, path + "/ffn", width, hidden),
          LayerNorm<Scalar>::create(ps, path + "/ffn_norm", width)};
}

template <typename Scalar>
Tensor<Scalar> EncoderLayer<Scalar>::operator()(const Tensor<Scalar>& x, const Context& ctx) const {
  auto y = attn_norm(ad::add(x, apply_dropout(attn(x, x), ctx)));
  return ffn_norm(ad::add(y, apply_dropout(ffn(y, ctx), ctx)));
}

template <typename Scalar>
Tensor<Scalar> sinusoidal_table(Index length, Index width) {
  ad::Array<Scalar> v(length * width);
  for (Index p = 0; p < length; ++p) {
    for (Index i = 0; i < width; i += 2) {
      const double angle = static_cast<double>(p) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(width));
      v[p * width + i] = static_cast<Scalar>(std::sin(angle));
      if (i + 1 < width) v[p * width + i + 1] = static_cast<Scalar>(std::cos(angle));
    }
  }
  return Tensor<Scalar>::from_values({length, width}, std::move(v));
}

#define GRIT_INSTANTIATE_LAYERS(S)                                            \
  template Tensor<S> apply_dropout(const Tensor<S>&, const Context&);         \
  template struct Linear<S>;                                                  \
  template struct LayerNorm<S>;                                               \
  template struct FeedForward<S>;                                             \
  template struct MultiHeadAttention<S>;                                      \
  template struct EncoderLayer<S>;                                            \
  template Tensor<S> sinusoidal_table<S>(Index, Index);

GRIT_INSTANTIATE_LAYERS(double)
GRIT_INSTANTIATE_LAYERS(float)

}  // namespace grit::nn
