#include "grit/model/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace grit::model {

namespace {

template <typename Scalar>
Tensor<Scalar> level_points(const Tensor<Scalar>& offsets6, const Tensor<Scalar>& reference, int level, Index height,
                            Index width) {
  const Index B = offsets6.dim(0), N = offsets6.dim(1), G = offsets6.dim(2), K = offsets6.dim(4);
  auto off = ad::reshape(ad::slice(offsets6, 3, level, 1), {B, N, G, K, 2});
  off = ad::permute(off, {0, 1, 3, 2, 4});
  auto inv = Tensor<Scalar>::from_vector({2}, {Scalar(1) / static_cast<Scalar>(width), Scalar(1) / static_cast<Scalar>(height)});
  off = ad::mul(off, inv);
  Tensor<Scalar> ref;
  if (reference.rank() == 2) {
    ref = ad::reshape(reference, {1, N, 1, 1, 2});
  } else {
    ref = ad::reshape(reference, {B, N, 1, 1, 2});
  }
  auto pts = ad::add(off, ad::broadcast_to(ref, {B, N, K, G, 2}));
  return ad::reshape(pts, {B, N * K, G, 2});
}

template <typename Scalar>
Tensor<Scalar> image_rows(const Tensor<Scalar>& batched, Index image) {
  Shape s(batched.shape().begin() + 1, batched.shape().end());
  return ad::reshape(ad::slice(batched, 0, image, 1), s);
}

std::vector<double> softmax_rows(const double* logits, Index rows, Index width) {
  std::vector<double> p(static_cast<std::size_t>(rows * width));
  for (Index r = 0; r < rows; ++r) {
    const double* x = logits + r * width;
    const double m = *std::max_element(x, x + width);
    double z = 0.0;
    for (Index c = 0; c < width; ++c) z += std::exp(x[c] - m);
    for (Index c = 0; c < width; ++c) p[static_cast<std::size_t>(r * width + c)] = std::exp(x[c] - m) / z;
  }
  return p;
}

template <typename Scalar>
std::vector<double> to_double(const Tensor<Scalar>& t, Index image) {
  const Index per = t.numel() / t.dim(0);
  std::vector<double> out(static_cast<std::size_t>(per));
  for (Index i = 0; i < per; ++i) out[static_cast<std::size_t>(i)] = static_cast<double>(t.values()[image * per + i]);
  return out;
}

}  // namespace

template <typename Scalar>
DeformableAttention<Scalar> DeformableAttention<Scalar>::create(ad::ParameterSet<Scalar>& ps, const std::string& path,
                                                                Index width, int heads, int levels, int points) {
  if (width % heads != 0) throw std::invalid_argument("deformable attention width must divide into heads");
  DeformableAttention a;
  a.heads = heads;
  a.levels = levels;
  a.points = points;
  const Index slots = Index{heads} * levels * points;
  a.offsets = nn::Linear<Scalar>::create(ps, path + "/offsets", width, slots * 2);
  a.weights = nn::Linear<Scalar>::create(ps, path + "/weights", width, slots);
  a.value_proj = nn::Linear<Scalar>::create(ps, path + "/value_proj", width, width);
  a.output_proj = nn::Linear<Scalar>::create(ps, path + "/output_proj", width, width);
  init_offset_bias(a);
  a.weights.weight.mutable_values().setZero();
  a.weights.bias.mutable_values().setZero();
  return a;
}

template <typename Scalar>
void init_offset_bias(DeformableAttention<Scalar>& attn) {
  attn.offsets.weight.mutable_values().setZero();
  auto& bias = attn.offsets.bias.mutable_values();
  for (int g = 0; g < attn.heads; ++g) {
    const double theta = 2.0 * std::numbers::pi * g / attn.heads;
    double dx = std::cos(theta), dy = std::sin(theta);
    const double norm = std::max(std::abs(dx), std::abs(dy));
    dx /= norm;
    dy /= norm;
    for (int l = 0; l < attn.levels; ++l) {
      for (int k = 0; k < attn.points; ++k) {
        const Index base = ((Index{g} * attn.levels + l) * attn.points + k) * 2;
        bias[base] = static_cast<Scalar>(dx * (k + 1));
        bias[base + 1] = static_cast<Scalar>(dy * (k + 1));
      }
    }
  }
}

template <typename Scalar>
Tensor<Scalar> DeformableAttention<Scalar>::attention_weights(const Tensor<Scalar>& query) const {
  const Index B = query.dim(0), N = query.dim(1);
  return ad::softmax(ad::reshape(weights(query), {B, N, heads, Index{levels} * points}), -1);
}

template <typename Scalar>
Tensor<Scalar> DeformableAttention<Scalar>::sampling_points(const Tensor<Scalar>& query,
                                                            const Tensor<Scalar>& reference, int level,
                                                            Index level_height, Index level_width) const {
  const Index B = query.dim(0), N = query.dim(1);
  auto off = ad::reshape(offsets(query), {B, N, heads, levels, points, 2});
  return level_points(off, reference, level, level_height, level_width);
}

template <typename Scalar>
Tensor<Scalar> DeformableAttention<Scalar>::operator()(const Tensor<Scalar>& query, const Tensor<Scalar>& reference,
                                                       const std::vector<Tensor<Scalar>>& maps) const {
  if (maps.empty()) throw std::invalid_argument("deformable attention needs at least one level");
  if (static_cast<int>(maps.size()) != levels) {
    throw std::invalid_argument("deformable attention built for " + std::to_string(levels) + " levels, got " +
                                std::to_string(maps.size()));
  }
  const Index B = query.dim(0), N = query.dim(1), d = query.dim(2);
  const Index cg = d / heads;
  auto off = ad::reshape(offsets(query), {B, N, heads, levels, points, 2});
  std::vector<Tensor<Scalar>> samples;
  for (int l = 0; l < levels; ++l) {
    const auto& m = maps[static_cast<std::size_t>(l)];
    const Index H = m.dim(1), W = m.dim(2);
    auto values = ad::reshape(value_proj(m), {B, H, W, heads, cg});
    auto pts = level_points(off, reference, l, H, W);
    samples.push_back(ad::reshape(ad::bilinear_sample(values, pts), {B, N, points, heads, cg}));
  }
  const Index lk = Index{levels} * points;
  auto stacked = ad::permute(ad::concat(samples, 2), {0, 1, 3, 2, 4});
  stacked = ad::reshape(stacked, {B * N * heads, lk, cg});
  auto w = ad::reshape(attention_weights(query), {B * N * heads, 1, lk});
  return output_proj(ad::reshape(ad::matmul(w, stacked), {B, N, d}));
}

template <typename Scalar>
DetectorLayer<Scalar> DetectorLayer<Scalar>::create(ad::ParameterSet<Scalar>& ps, const std::string& path,
                                                    const ModelConfig& c) {
  const Index d = c.d_model;
  return {nn::MultiHeadAttention<Scalar>::create(ps, path + "/self_attn", d, c.heads),
          nn::LayerNorm<Scalar>::create(ps, path + "/norm1", d),
          DeformableAttention<Scalar>::create(ps, path + "/cross", d, c.heads, c.backbone.pyramid_levels,
                                              c.sampling_points),
          nn::LayerNorm<Scalar>::create(ps, path + "/norm2", d),
          nn::FeedForward<Scalar>::create(ps, path + "/ffn", d, d * c.ffn_mult),
          nn::LayerNorm<Scalar>::create(ps, path + "/norm3", d)};
}

template <typename Scalar>
Tensor<Scalar> DetectorLayer<Scalar>::operator()(const Tensor<Scalar>& queries, const Tensor<Scalar>& reference,
                                                 const std::vector<Tensor<Scalar>>& levels, const Context& ctx) const {
  auto x = norm1(ad::add(queries, nn::apply_dropout(self_attn(queries, queries), ctx)));
  x = norm2(ad::add(x, nn::apply_dropout(cross(x, reference, levels), ctx)));
  return norm3(ad::add(x, nn::apply_dropout(ffn(x, ctx), ctx)));
}

template <typename Scalar>
RegionDetector<Scalar> RegionDetector<Scalar>::create(ad::ParameterSet<Scalar>& ps, const std::string& path,
                                                      const ModelConfig& c, const std::vector<Index>& level_channels) {
  RegionDetector r;
  const Index d = c.d_model;
  for (std::size_t l = 0; l < level_channels.size(); ++l) {
    r.level_proj.push_back(
        nn::Linear<Scalar>::create(ps, path + "/level_proj" + std::to_string(l), level_channels[l], d, false));
  }
  r.queries = ps.normal(path + "/queries", {c.num_queries, d}, c.query_init_std);
  r.reference_proj = nn::Linear<Scalar>::create(ps, path + "/reference_proj", d, 2);
  for (int i = 0; i < c.detector_layers; ++i) {
    r.layers.push_back(DetectorLayer<Scalar>::create(ps, path + "/layer" + std::to_string(i), c));
  }
  r.class_head = nn::Linear<Scalar>::create(ps, path + "/class_head", d, c.num_classes + 1);
  r.attr_head = nn::Linear<Scalar>::create(ps, path + "/attr_head", d, c.num_attributes);
  r.box_mlp.push_back(nn::Linear<Scalar>::create(ps, path + "/box_mlp0", d, d));
  r.box_mlp.push_back(nn::Linear<Scalar>::create(ps, path + "/box_mlp1", d, d));
  r.box_mlp.push_back(nn::Linear<Scalar>::create(ps, path + "/box_mlp2", d, 4));
  return r;
}

template <typename Scalar>
std::vector<Tensor<Scalar>> RegionDetector<Scalar>::project_levels(const FeaturePyramid<Scalar>& pyramid) const {
  if (pyramid.levels.size() != level_proj.size()) {
    throw std::invalid_argument("pyramid has " + std::to_string(pyramid.levels.size()) + " levels, detector expects " +
                                std::to_string(level_proj.size()));
  }
  std::vector<Tensor<Scalar>> out;
  for (std::size_t l = 0; l < level_proj.size(); ++l) out.push_back(level_proj[l](pyramid.levels[l]));
  return out;
}

template <typename Scalar>
Tensor<Scalar> RegionDetector<Scalar>::reference_points() const {
  return ad::sigmoid(reference_proj(queries));
}

template <typename Scalar>
Tensor<Scalar> RegionDetector<Scalar>::decode_regions(const std::vector<Tensor<Scalar>>& projected,
                                                      const Context& ctx) const {
  const Index B = projected.front().dim(0);
  auto x = ad::broadcast_to(queries, {B, queries.dim(0), queries.dim(1)});
  if (layers.empty()) return x;
  const auto ref = reference_points();
  for (const auto& layer : layers) x = layer(x, ref, projected, ctx);
  return x;
}

template <typename Scalar>
DetectionPrediction<Scalar> RegionDetector<Scalar>::heads(const Tensor<Scalar>& regions) const {
  DetectionPrediction<Scalar> p;
  p.class_logits = class_head(regions);
  p.attr_logits = attr_head(regions);
  auto h = ad::relu(box_mlp[0](regions));
  h = ad::relu(box_mlp[1](h));
  const Scalar eps(1e-5);
  auto ref = reference_points();
  auto logit = ad::log(ad::clamp_min(ref, eps)) - ad::log(ad::clamp_min(Scalar(1) - ref, eps));
  auto prior = ad::concat<Scalar>({logit, Tensor<Scalar>::zeros({ref.dim(0), 2})}, 1);
  p.boxes = ad::sigmoid(ad::add(box_mlp[2](h), prior));
  return p;
}

template <typename Scalar>
RegionOutput<Scalar> RegionDetector<Scalar>::operator()(const FeaturePyramid<Scalar>& pyramid,
                                                        const Context& ctx) const {
  RegionOutput<Scalar> out;
  out.features = decode_regions(project_levels(pyramid), ctx);
  out.prediction = heads(out.features);
  return out;
}

std::vector<double> match_cost(const std::vector<double>& class_probs, const std::vector<double>& boxes, Index queries,
                               Index classes_plus_one, const DetectionTarget& target, const MatchWeights& w) {
  const Index rows = static_cast<Index>(target.size());
  std::vector<double> cost(static_cast<std::size_t>(rows * queries));
  for (Index i = 0; i < rows; ++i) {
    const auto& obj = target[static_cast<std::size_t>(i)];
    for (Index j = 0; j < queries; ++j) {
      const Box b{boxes[j * 4], boxes[j * 4 + 1], boxes[j * 4 + 2], boxes[j * 4 + 3]};
      cost[static_cast<std::size_t>(i * queries + j)] =
          w.class_weight * (1.0 - class_probs[j * classes_plus_one + obj.cls]) + box_loss(obj.box, b, w.box);
    }
  }
  return cost;
}

template <typename Scalar>
std::vector<int> match_image(const DetectionPrediction<Scalar>& pred, Index image, const DetectionTarget& target,
                             const MatchWeights& w) {
  const Index N = pred.class_logits.dim(1), C = pred.class_logits.dim(2);
  if (static_cast<Index>(target.size()) > N) {
    throw std::invalid_argument("image has " + std::to_string(target.size()) + " objects but only " +
                                std::to_string(N) + " queries");
  }
  const auto logits = to_double(pred.class_logits, image);
  const auto probs = softmax_rows(logits.data(), N, C);
  const auto boxes = to_double(pred.boxes, image);
  const auto cost = match_cost(probs, boxes, N, C, target, w);
  return hungarian(cost, static_cast<int>(target.size()), static_cast<int>(N));
}

template <typename Scalar>
Tensor<Scalar> detection_loss(const DetectionPrediction<Scalar>& pred, Index image, const DetectionTarget& target,
                              const std::vector<int>& assignment, const LossWeights& w) {
  if (assignment.size() != target.size()) throw std::invalid_argument("assignment does not cover every object");
  const Index N = pred.class_logits.dim(1), C = pred.class_logits.dim(2);
  const Index no_object = C - 1;
  auto class_logp = ad::log_softmax(image_rows(pred.class_logits, image));

  std::vector<Index> cls(static_cast<std::size_t>(N), no_object);
  ad::Array<Scalar> weight = ad::Array<Scalar>::Constant(N, static_cast<Scalar>(w.no_object));
  std::vector<Index> matched, matched_attr_rows, attr_labels;
  ad::Array<Scalar> target_boxes(static_cast<Index>(target.size()) * 4);
  for (std::size_t i = 0; i < target.size(); ++i) {
    const int q = assignment[i];
    if (q < 0 || q >= N) throw std::invalid_argument("assignment refers to a missing query");
    const auto& obj = target[i];
    if (obj.cls < 0 || obj.cls >= no_object) throw std::invalid_argument("object class out of range");
    cls[static_cast<std::size_t>(q)] = obj.cls;
    weight[q] = Scalar(1);
    matched.push_back(q);
    const double b[4] = {obj.box.cx, obj.box.cy, obj.box.w, obj.box.h};
    for (int c = 0; c < 4; ++c) target_boxes[static_cast<Index>(i) * 4 + c] = static_cast<Scalar>(b[c]);
    if (obj.attribute >= 0) {
      matched_attr_rows.push_back(q);
      attr_labels.push_back(obj.attribute);
    }
  }
  auto loss = -ad::sum(ad::mul(ad::pick(class_logp, cls), Tensor<Scalar>::from_values({N}, weight)));
  if (!matched.empty()) {
    const Index m = static_cast<Index>(matched.size());
    auto pb = ad::gather_rows(image_rows(pred.boxes, image), matched, {m});
    auto tb = Tensor<Scalar>::from_values({m, 4}, target_boxes);
    loss = ad::add(loss, ad::sum(box_loss(pb, tb, w.box)));
  }
  if (w.attributes && !matched_attr_rows.empty()) {
    const Index m = static_cast<Index>(matched_attr_rows.size());
    auto attr_logp = ad::log_softmax(ad::gather_rows(image_rows(pred.attr_logits, image), matched_attr_rows, {m}));
    loss = ad::sub(loss, ad::sum(ad::pick(attr_logp, attr_labels)));
  }
  return loss;
}

template <typename Scalar>
Tensor<Scalar> detection_loss(const DetectionPrediction<Scalar>& pred, const std::vector<DetectionTarget>& targets,
                              const MatchWeights& match, const LossWeights& w) {
  const Index B = pred.class_logits.dim(0);
  if (static_cast<Index>(targets.size()) != B) throw std::invalid_argument("one detection target per image required");
  Tensor<Scalar> total;
  for (Index b = 0; b < B; ++b) {
    const auto& t = targets[static_cast<std::size_t>(b)];
    auto l = detection_loss(pred, b, t, match_image(pred, b, t, match), w);
    total = total.defined() ? ad::add(total, l) : l;
  }
  return ad::scale(total, Scalar(1) / static_cast<Scalar>(B));
}

template <typename Scalar>
std::vector<std::vector<Detection>> detections(const DetectionPrediction<Scalar>& pred) {
  const Index B = pred.class_logits.dim(0), N = pred.class_logits.dim(1), C = pred.class_logits.dim(2);
  const Index A = pred.attr_logits.dim(2);
  std::vector<std::vector<Detection>> out(static_cast<std::size_t>(B));
  for (Index b = 0; b < B; ++b) {
    const auto logits = to_double(pred.class_logits, b);
    const auto probs = softmax_rows(logits.data(), N, C);
    const auto attrs = to_double(pred.attr_logits, b);
    const auto boxes = to_double(pred.boxes, b);
    for (Index q = 0; q < N; ++q) {
      Detection d;
      for (Index c = 0; c + 1 < C; ++c) {
        const double p = probs[static_cast<std::size_t>(q * C + c)];
        if (c == 0 || p > d.score) {
          d.score = p;
          d.cls = static_cast<int>(c);
        }
      }
      const auto* a = attrs.data() + q * A;
      d.attribute = static_cast<int>(std::max_element(a, a + A) - a);
      const auto* bx = boxes.data() + q * 4;
      d.box = {bx[0], bx[1], bx[2], bx[3]};
      out[static_cast<std::size_t>(b)].push_back(d);
    }
  }
  return out;
}

#define GRIT_INSTANTIATE_DETECTOR(S)                                                                               \
  template struct DeformableAttention<S>;                                                                          \
  template void init_offset_bias(DeformableAttention<S>&);                                                         \
  template struct DetectorLayer<S>;                                                                                \
  template struct RegionDetector<S>;                                                                               \
  template std::vector<int> match_image(const DetectionPrediction<S>&, Index, const DetectionTarget&,             \
                                        const MatchWeights&);                                                      \
  template Tensor<S> detection_loss(const DetectionPrediction<S>&, Index, const DetectionTarget&,                  \
                                    const std::vector<int>&, const LossWeights&);                                  \
  template Tensor<S> detection_loss(const DetectionPrediction<S>&, const std::vector<DetectionTarget>&,            \
                                    const MatchWeights&, const LossWeights&);                                      \
  template std::vector<std::vector<Detection>> detections(const DetectionPrediction<S>&);

GRIT_INSTANTIATE_DETECTOR(double)
GRIT_INSTANTIATE_DETECTOR(float)

}  // namespace grit::model
