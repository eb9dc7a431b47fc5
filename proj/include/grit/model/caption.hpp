#pragma once

#include <functional>
#include <vector>

#include "grit/config.hpp"
#include "grit/nn/layers.hpp"

namespace grit::model {

using ad::Index;
using ad::Tensor;
using nn::Context;

inline constexpr int kPadId = 0;
inline constexpr int kSosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;

/// Visual inputs to the caption generator; either may be undefined when the
/// fusion mode does not read it.
template <typename Scalar>
struct VisualFeatures {
  Tensor<Scalar> regions;  // (B, N, d)
  Tensor<Scalar> grid;     // (B, M, d), class token excluded
};

/// Intermediate values of one fusion sub-layer, for inspection.
template <typename Scalar>
struct FusionTrace {
  Tensor<Scalar> a_grid, a_region;
  Tensor<Scalar> gate_grid, gate_region;
  Tensor<Scalar> fused;
};

/// Keys and values of the visual features already projected for every
/// cross-attention sub-layer of every layer.
template <typename Scalar>
struct VisualMemory {
  struct Layer {
    nn::ProjectedMemory<Scalar> first;
    nn::ProjectedMemory<Scalar> second;
  };
  std::vector<Layer> layers;
  Index batch = 0;

  /// Copies of the memory rows for the given images, one per entry.
  VisualMemory select(const std::vector<Index>& images) const;
};

/// Cross-attention over (regions, grid) in one of the seven configurations.
/// `first`/`second` hold the attention sub-layers: the grid and region
/// branches for parallel modes, the two stages for sequential modes, and the
/// single sub-layer otherwise.
template <typename Scalar>
struct Fusion {
  FusionMode mode = FusionMode::parallel_sigmoid;
  nn::MultiHeadAttention<Scalar> first;
  nn::LayerNorm<Scalar> first_norm;
  nn::MultiHeadAttention<Scalar> second;
  nn::LayerNorm<Scalar> second_norm;
  nn::Linear<Scalar> gate_grid;    // 2d -> d
  nn::Linear<Scalar> gate_region;  // 2d -> d

  static Fusion create(ad::ParameterSet<Scalar>& ps, const std::string& path, FusionMode mode, Index width,
                       int heads);

  typename VisualMemory<Scalar>::Layer project(const VisualFeatures<Scalar>& visual) const;
  /// x: (B, T, d) output of masked self-attention.
  Tensor<Scalar> operator()(const Tensor<Scalar>& x, const typename VisualMemory<Scalar>::Layer& memory,
                            const Context& ctx, FusionTrace<Scalar>* trace = nullptr) const;
  Tensor<Scalar> operator()(const Tensor<Scalar>& x, const VisualFeatures<Scalar>& visual, const Context& ctx,
                            FusionTrace<Scalar>* trace = nullptr) const {
    return (*this)(x, project(visual), ctx, trace);
  }
};

template <typename Scalar>
struct CaptionLayer {
  nn::MultiHeadAttention<Scalar> self_attn;
  nn::LayerNorm<Scalar> self_norm;
  Fusion<Scalar> fusion;
  nn::FeedForward<Scalar> ffn;
  nn::LayerNorm<Scalar> ffn_norm;
};

template <typename Scalar>
struct CaptionGenerator {
  Tensor<Scalar> embedding;  // (V, d)
  std::vector<CaptionLayer<Scalar>> layers;
  nn::Linear<Scalar> vocab_proj;
  FusionMode mode = FusionMode::parallel_sigmoid;
  int max_len = 20;

  static CaptionGenerator create(ad::ParameterSet<Scalar>& ps, const std::string& path, const ModelConfig& config);

  Index vocab_size() const { return embedding.dim(0); }
  Index width() const { return embedding.dim(1); }

  /// Word embedding plus sinusoidal position; ids is (B, T) row-major.
  Tensor<Scalar> embed_tokens(const std::vector<int>& ids, Index batch, Index length) const;
  VisualMemory<Scalar> prepare(const VisualFeatures<Scalar>& visual) const;
  /// Teacher-forced logits (B, T, V) under a causal mask.
  Tensor<Scalar> forward(const std::vector<int>& ids, Index batch, Index length, const VisualMemory<Scalar>& memory,
                         const Context& ctx, std::vector<FusionTrace<Scalar>>* traces = nullptr) const;
  /// Log-probabilities of the next token after each prefix (all prefixes of equal length), (R, V).
  ad::RowMatrix<double> next_log_probs(const std::vector<std::vector<int>>& prefixes,
                                       const VisualMemory<Scalar>& memory) const;
};

struct Hypothesis {
  std::vector<int> tokens;        // without the leading start token
  std::vector<double> step_logp;  // one per emitted token
  double logprob = 0.0;           // sum of step_logp
  double score = 0.0;             // ranking score
  bool finished = false;          // ended with the end token rather than max_len
};

struct BeamOptions {
  int beam_size = 5;
  int max_len = 20;
  bool length_normalize = false;
  int sos = kSosId;
  int eos = kEosId;
};

/// rows name the source (image) of each prefix; returns an (R, V) log-prob matrix.
using StepFunction =
    std::function<ad::RowMatrix<double>(const std::vector<Index>& sources, const std::vector<std::vector<int>>& prefixes)>;

/// Independent beams for `sources` inputs advanced together. Finished
/// hypotheses stay frozen and compete with live ones; ties break towards the
/// lower token id, then the better-ranked parent.
std::vector<std::vector<Hypothesis>> beam_search(const StepFunction& step, Index sources, const BeamOptions& options);
/// Argmax decoding (lowest token id on ties).
std::vector<Hypothesis> greedy_decode(const StepFunction& step, Index sources, int max_len, int sos = kSosId,
                                      int eos = kEosId);

template <typename Scalar>
StepFunction caption_step(const CaptionGenerator<Scalar>& generator, const VisualMemory<Scalar>& memory);

}  // namespace grit::model
