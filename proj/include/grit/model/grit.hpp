#pragma once

#include <cstdint>

#include "grit/model/backbone.hpp"
#include "grit/model/caption.hpp"
#include "grit/model/detector.hpp"
#include "grit/model/grid.hpp"

namespace grit::model {

/// Backbone, region detector, grid network and caption generator sharing one
/// parameter set. Parameter paths start with "backbone/", "detector/",
/// "grid/" or "caption/".
template <typename Scalar>
struct GritModel {
  ModelConfig config;
  ad::ParameterSet<Scalar> params;
  Backbone<Scalar> backbone;
  RegionDetector<Scalar> detector;
  GridNetwork<Scalar> grid;
  CaptionGenerator<Scalar> caption;

  static GritModel create(const ModelConfig& config, std::uint64_t seed);

  /// True for parameters of the backbone and the detector.
  static bool is_visual(const std::string& path);

  FeaturePyramid<Scalar> pyramid(const Tensor<Scalar>& images, const Context& ctx) const;
  /// Region and grid features required by the fusion mode; regions are also
  /// decoded when `detection` is requested.
  VisualFeatures<Scalar> features(const FeaturePyramid<Scalar>& pyramid, const Context& ctx,
                                  DetectionPrediction<Scalar>* detection = nullptr) const;
  /// Grid features (B, M, d) from the last pyramid level.
  Tensor<Scalar> grid_features(const Tensor<Scalar>& last_level, const Context& ctx) const;

  DetectionPrediction<Scalar> detect(const Tensor<Scalar>& images, const Context& ctx) const;
  /// Beam search from images (B, H, W, 3).
  std::vector<std::vector<Hypothesis>> generate(const Tensor<Scalar>& images, const BeamOptions& options) const;
  std::vector<std::vector<Hypothesis>> generate(const VisualFeatures<Scalar>& visual, const BeamOptions& options) const;
};

}  // namespace grit::model
