#include "grit/model/grit.hpp"

namespace grit::model {

template <typename Scalar>
GritModel<Scalar> GritModel<Scalar>::create(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  GritModel m;
  m.config = config;
  m.params = ad::ParameterSet<Scalar>(seed);
  m.backbone = Backbone<Scalar>::create(m.params, "backbone", config.backbone);
  const auto channels = m.backbone.level_channels();
  m.detector = RegionDetector<Scalar>::create(m.params, "detector", config, channels);
  m.grid = GridNetwork<Scalar>::create(m.params, "grid", config, channels.back());
  m.caption = CaptionGenerator<Scalar>::create(m.params, "caption", config);
  return m;
}

template <typename Scalar>
bool GritModel<Scalar>::is_visual(const std::string& path) {
  return path.rfind("backbone/", 0) == 0 || path.rfind("detector/", 0) == 0;
}

template <typename Scalar>
FeaturePyramid<Scalar> GritModel<Scalar>::pyramid(const Tensor<Scalar>& images, const Context& ctx) const {
  return backbone(images, ctx);
}

template <typename Scalar>
Tensor<Scalar> GritModel<Scalar>::grid_features(const Tensor<Scalar>& last_level, const Context& ctx) const {
  return grid_tokens(grid(last_level, ctx));
}

template <typename Scalar>
VisualFeatures<Scalar> GritModel<Scalar>::features(const FeaturePyramid<Scalar>& pyr, const Context& ctx,
                                                   DetectionPrediction<Scalar>* detection) const {
  VisualFeatures<Scalar> v;
  if (uses_regions(config.fusion) || detection) {
    auto out = detector(pyr, ctx);
    if (uses_regions(config.fusion)) v.regions = out.features;
    if (detection) *detection = out.prediction;
  }
  if (uses_grid(config.fusion)) v.grid = grid_features(pyr.levels.back(), ctx);
  return v;
}

template <typename Scalar>
DetectionPrediction<Scalar> GritModel<Scalar>::detect(const Tensor<Scalar>& images, const Context& ctx) const {
  return detector(pyramid(images, ctx), ctx).prediction;
}

template <typename Scalar>
std::vector<std::vector<Hypothesis>> GritModel<Scalar>::generate(const Tensor<Scalar>& images,
                                                                 const BeamOptions& options) const {
  ad::NoGradGuard guard;
  const Context ctx = Context::eval();
  return generate(features(pyramid(images, ctx), ctx), options);
}

template <typename Scalar>
std::vector<std::vector<Hypothesis>> GritModel<Scalar>::generate(const VisualFeatures<Scalar>& visual,
                                                                 const BeamOptions& options) const {
  ad::NoGradGuard guard;
  const auto memory = caption.prepare(visual);
  return beam_search(caption_step(caption, memory), memory.batch, options);
}

template struct GritModel<double>;
template struct GritModel<float>;

}  // namespace grit::model
