#pragma once

#include <vector>

#include "grit/config.hpp"
#include "grit/nn/layers.hpp"

namespace grit::model {

using ad::Index;
using ad::Shape;
using ad::Tensor;
using nn::Context;

/// Multi-scale maps, each (B, H_l, W_l, C_l), finest first.
template <typename Scalar>
struct FeaturePyramid {
  std::vector<Tensor<Scalar>> levels;

  Index batch() const { return levels.front().dim(0); }
  const Tensor<Scalar>& last() const { return levels.back(); }
};

/// Row bookkeeping for attention over (optionally shifted) windows of an
/// (h, w) map. Windows larger than the map shrink to the map, which makes the
/// block a global attention layer and disables the shift.
struct WindowLayout {
  Index height = 0, width = 0;
  Index win_h = 0, win_w = 0;
  Index windows_y = 0, windows_x = 0;
  Index shift_y = 0, shift_x = 0;
  /// For each (window, slot), the map position it reads (y * width + x), or -1 on padding.
  std::vector<Index> source;
  /// For each map position, its (window * slots + slot) row.
  std::vector<Index> inverse;
  /// Allowed key slots per (window, query slot, key slot); empty when unrestricted.
  ad::AttentionMask mask;

  Index windows() const { return windows_y * windows_x; }
  Index slots() const { return win_h * win_w; }
};

WindowLayout make_window_layout(Index height, Index width, Index window, bool shift);

/// Non-overlapping p x p patches flattened to (B, H/p, W/p, p*p*3) in
/// (dy, dx, channel) order.
template <typename Scalar>
Tensor<Scalar> patchify(const Tensor<Scalar>& images, Index patch);

template <typename Scalar>
struct PatchEmbed {
  nn::Linear<Scalar> proj;
  Index patch = 4;

  static PatchEmbed create(ad::ParameterSet<Scalar>& ps, const std::string& path, Index patch, Index channels);
  /// images: (B, H, W, 3) with values in [0, 1].
  Tensor<Scalar> operator()(const Tensor<Scalar>& images) const;
};

/// Pre-norm block: x + WMSA(LN(x)), then y + MLP(LN(y)).
template <typename Scalar>
struct SwinBlock {
  nn::LayerNorm<Scalar> norm1;
  nn::MultiHeadAttention<Scalar> attn;
  nn::LayerNorm<Scalar> norm2;
  nn::FeedForward<Scalar> mlp;

  static SwinBlock create(ad::ParameterSet<Scalar>& ps, const std::string& path, Index channels, int heads,
                          Index hidden);
  Tensor<Scalar> operator()(const Tensor<Scalar>& map, Index window, bool shift, const Context& ctx) const;
};

/// Concatenates 2x2 neighbourhoods (odd sizes pad by edge replication), then
/// LN(4C) and a bias-free 4C -> 2C reduction.
template <typename Scalar>
struct PatchMerge {
  nn::LayerNorm<Scalar> norm;
  nn::Linear<Scalar> reduction;

  static PatchMerge create(ad::ParameterSet<Scalar>& ps, const std::string& path, Index channels);
  Tensor<Scalar> operator()(const Tensor<Scalar>& map) const;
};

template <typename Scalar>
struct Backbone {
  BackboneConfig config;
  PatchEmbed<Scalar> embed;
  std::vector<std::vector<SwinBlock<Scalar>>> stages;
  /// One merge after every stage; the last one produces the extra coarsest map.
  std::vector<PatchMerge<Scalar>> merges;
  std::vector<nn::LayerNorm<Scalar>> level_norms;

  static Backbone create(ad::ParameterSet<Scalar>& ps, const std::string& path, const BackboneConfig& config);

  /// Channel width of each returned level.
  std::vector<Index> level_channels() const;
  FeaturePyramid<Scalar> operator()(const Tensor<Scalar>& images, const Context& ctx) const;
};

}  // namespace grit::model
