#pragma once

#include <vector>

#include "grit/model/backbone.hpp"
#include "grit/model/boxes.hpp"

namespace grit::model {

/// Multi-scale deformable attention: every (head, level, point) slot samples
/// its level at the reference point plus a predicted offset, measured in cells
/// of that level, and the samples are mixed by a softmax over levels x points.
template <typename Scalar>
struct DeformableAttention {
  nn::Linear<Scalar> offsets;     // d -> heads * levels * points * 2
  nn::Linear<Scalar> weights;     // d -> heads * levels * points
  nn::Linear<Scalar> value_proj;  // d -> d
  nn::Linear<Scalar> output_proj; // d -> d
  int heads = 1;
  int levels = 1;
  int points = 1;

  static DeformableAttention create(ad::ParameterSet<Scalar>& ps, const std::string& path, Index width, int heads,
                                    int levels, int points);

  /// query: (B, N, d); reference: (N, 2) shared or (B, N, 2); levels: (B, H_l, W_l, d).
  Tensor<Scalar> operator()(const Tensor<Scalar>& query, const Tensor<Scalar>& reference,
                            const std::vector<Tensor<Scalar>>& levels) const;
  /// Softmax weights, (B, N, heads, levels * points).
  Tensor<Scalar> attention_weights(const Tensor<Scalar>& query) const;
  /// Normalized sampling locations for one level, (B, N * points, heads, 2).
  Tensor<Scalar> sampling_points(const Tensor<Scalar>& query, const Tensor<Scalar>& reference, int level,
                                 Index level_height, Index level_width) const;
};

/// Post-norm decoder layer: query self-attention, deformable cross-attention, FFN.
template <typename Scalar>
struct DetectorLayer {
  nn::MultiHeadAttention<Scalar> self_attn;
  nn::LayerNorm<Scalar> norm1;
  DeformableAttention<Scalar> cross;
  nn::LayerNorm<Scalar> norm2;
  nn::FeedForward<Scalar> ffn;
  nn::LayerNorm<Scalar> norm3;

  static DetectorLayer create(ad::ParameterSet<Scalar>& ps, const std::string& path, const ModelConfig& config);
  Tensor<Scalar> operator()(const Tensor<Scalar>& queries, const Tensor<Scalar>& reference,
                            const std::vector<Tensor<Scalar>>& levels, const Context& ctx) const;
};

template <typename Scalar>
struct DetectionPrediction {
  Tensor<Scalar> class_logits;  // (B, N, classes + 1); the last column is the no-object class
  Tensor<Scalar> attr_logits;   // (B, N, attributes)
  Tensor<Scalar> boxes;         // (B, N, 4) in (cx, cy, w, h)
};

template <typename Scalar>
struct RegionOutput {
  Tensor<Scalar> features;  // (B, N, d)
  DetectionPrediction<Scalar> prediction;
};

template <typename Scalar>
struct RegionDetector {
  std::vector<nn::Linear<Scalar>> level_proj;  // W_l^r, C_l -> d
  Tensor<Scalar> queries;                      // R_0, (N, d)
  nn::Linear<Scalar> reference_proj;           // d -> 2, then sigmoid
  std::vector<DetectorLayer<Scalar>> layers;
  nn::Linear<Scalar> class_head;
  nn::Linear<Scalar> attr_head;
  std::vector<nn::Linear<Scalar>> box_mlp;     // three layers, ReLU between

  static RegionDetector create(ad::ParameterSet<Scalar>& ps, const std::string& path, const ModelConfig& config,
                               const std::vector<Index>& level_channels);

  std::vector<Tensor<Scalar>> project_levels(const FeaturePyramid<Scalar>& pyramid) const;
  Tensor<Scalar> reference_points() const;
  /// Runs the decoder stack on R_0; returns (B, N, d).
  Tensor<Scalar> decode_regions(const std::vector<Tensor<Scalar>>& projected, const Context& ctx) const;
  DetectionPrediction<Scalar> heads(const Tensor<Scalar>& regions) const;
  RegionOutput<Scalar> operator()(const FeaturePyramid<Scalar>& pyramid, const Context& ctx) const;
};

/// Uses the first `points` (cos, sin) directions per head, scaled by point
/// index + 1, as the initial offset bias.
template <typename Scalar>
void init_offset_bias(DeformableAttention<Scalar>& attn);

struct MatchWeights {
  double class_weight = 2.0;
  BoxLossWeights box;
};

struct LossWeights {
  double no_object = 0.1;
  BoxLossWeights box;
  bool attributes = true;
};

/// Cost rows are objects, columns queries: class_weight * (1 - p_j(c_i)) + box_loss(b_i, b_j).
/// class_probs: (N, classes + 1) probabilities; boxes: (N, 4).
std::vector<double> match_cost(const std::vector<double>& class_probs, const std::vector<double>& boxes, Index queries,
                               Index classes_plus_one, const DetectionTarget& target, const MatchWeights& w);
/// For each object, the query it is matched to.
template <typename Scalar>
std::vector<int> match_image(const DetectionPrediction<Scalar>& pred, Index image, const DetectionTarget& target,
                             const MatchWeights& w);

/// Set loss for one image: -log p(c) + box loss + -log p(a) for matched objects
/// (attribute only where labeled), plus no_object * -log p(no-object) for the rest.
template <typename Scalar>
Tensor<Scalar> detection_loss(const DetectionPrediction<Scalar>& pred, Index image, const DetectionTarget& target,
                              const std::vector<int>& assignment, const LossWeights& w);
/// Matches every image and averages the per-image losses.
template <typename Scalar>
Tensor<Scalar> detection_loss(const DetectionPrediction<Scalar>& pred, const std::vector<DetectionTarget>& targets,
                              const MatchWeights& match, const LossWeights& w);

/// One detection per query: best real class, its probability as the score.
template <typename Scalar>
std::vector<std::vector<Detection>> detections(const DetectionPrediction<Scalar>& pred);

}  // namespace grit::model
