#pragma once

#include "grit/model/backbone.hpp"

namespace grit::model {

/// Fixed 2-D sinusoidal table (h * w, d): the first d/2 columns encode the row,
/// the rest the column, each with the interleaved 1-D scheme.
template <typename Scalar>
Tensor<Scalar> grid_positional_table(Index height, Index width, Index d);

/// Grid features: [g_cls; W^g flatten(V_last)] refined by L_g encoder layers.
/// Row 0 of the output is the class token.
template <typename Scalar>
struct GridNetwork {
  nn::Linear<Scalar> proj;  // W^g, C_last -> d, no bias
  Tensor<Scalar> cls_token; // (1, d)
  std::vector<nn::EncoderLayer<Scalar>> layers;
  bool positional = false;

  static GridNetwork create(ad::ParameterSet<Scalar>& ps, const std::string& path, const ModelConfig& config,
                            Index last_channels);

  /// last: (B, h, w, C) -> (B, 1 + h*w, d).
  Tensor<Scalar> operator()(const Tensor<Scalar>& last, const Context& ctx) const;
};

/// Rows 1..M of the grid output, (B, M, d).
template <typename Scalar>
Tensor<Scalar> grid_tokens(const Tensor<Scalar>& grid_output);

}  // namespace grit::model
