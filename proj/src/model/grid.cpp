#include "grit/model/grid.hpp"

#include <stdexcept>

namespace grit::model {

template <typename Scalar>
Tensor<Scalar> grid_positional_table(Index height, Index width, Index d) {
  if (d % 4 != 0) throw std::invalid_argument("2-D positional encoding needs d divisible by 4");
  const Index half = d / 2;
  const auto rows = nn::sinusoidal_table<Scalar>(height, half);
  const auto cols = nn::sinusoidal_table<Scalar>(width, half);
  ad::Array<Scalar> v(height * width * d);
  for (Index y = 0; y < height; ++y) {
    for (Index x = 0; x < width; ++x) {
      const Index base = (y * width + x) * d;
      v.segment(base, half) = rows.values().segment(y * half, half);
      v.segment(base + half, half) = cols.values().segment(x * half, half);
    }
  }
  return Tensor<Scalar>::from_values({height * width, d}, std::move(v));
}

template <typename Scalar>
GridNetwork<Scalar> GridNetwork<Scalar>::create(ad::ParameterSet<Scalar>& ps, const std::string& path,
                                                const ModelConfig& c, Index last_channels) {
  GridNetwork g;
  const Index d = c.d_model;
  g.proj = nn::Linear<Scalar>::create(ps, path + "/proj", last_channels, d, false);
  g.cls_token = ps.normal(path + "/cls_token", {1, d}, 0.02);
  for (int i = 0; i < c.grid_layers; ++i) {
    g.layers.push_back(
        nn::EncoderLayer<Scalar>::create(ps, path + "/layer" + std::to_string(i), d, c.heads, d * c.ffn_mult));
  }
  g.positional = c.grid_positional_encoding;
  return g;
}

template <typename Scalar>
Tensor<Scalar> GridNetwork<Scalar>::operator()(const Tensor<Scalar>& last, const Context& ctx) const {
  if (last.rank() != 4) throw std::invalid_argument("grid network expects a (B, h, w, C) map");
  const Index B = last.dim(0), h = last.dim(1), w = last.dim(2);
  auto tokens = proj(ad::reshape(last, {B, h * w, last.dim(3)}));
  const Index d = tokens.dim(2);
  if (positional) tokens = ad::add(tokens, grid_positional_table<Scalar>(h, w, d));
  auto x = ad::concat<Scalar>({ad::broadcast_to(cls_token, {B, 1, d}), tokens}, 1);
  for (const auto& layer : layers) x = layer(x, ctx);
  return x;
}

template <typename Scalar>
Tensor<Scalar> grid_tokens(const Tensor<Scalar>& grid_output) {
  return ad::slice(grid_output, 1, 1, grid_output.dim(1) - 1);
}

#define GRIT_INSTANTIATE_GRID(S)                                    \
  template Tensor<S> grid_positional_table<S>(Index, Index, Index); \
  template struct GridNetwork<S>;                                   \
  template Tensor<S> grid_tokens(const Tensor<S>&);

GRIT_INSTANTIATE_GRID(double)
GRIT_INSTANTIATE_GRID(float)

}  // namespace grit::model
