#pragma once

#include <vector>

#include "grit/autodiff/ops.hpp"

namespace grit::train {

using ad::Index;
using ad::Tensor;

/// Per-position target log-likelihoods of teacher-forced logits (B, T, V);
/// targets is (B, T) row-major, positions holding `pad` contribute zero.
/// Returns (B, T).
template <typename Scalar>
Tensor<Scalar> target_log_probs(const Tensor<Scalar>& logits, const std::vector<int>& targets, int pad);

/// Negative log-likelihood summed over non-pad positions, averaged over the batch.
template <typename Scalar>
Tensor<Scalar> xe_loss(const Tensor<Scalar>& logits, const std::vector<int>& targets, int pad = 0);

/// Beam sentences of one image with their rewards and total log-probabilities.
template <typename Scalar>
struct RLBatch {
  std::vector<std::vector<int>> sentences;
  std::vector<double> rewards;
  double baseline = 0.0;
  Tensor<Scalar> log_probs;  // (k)

  /// Sets the baseline to the mean reward; requires k >= 2.
  static RLBatch make(std::vector<std::vector<int>> sentences, std::vector<double> rewards, Tensor<Scalar> log_probs);
};

/// Mean of the rewards, computed as r_0 + mean(r_i - r_0) so equal rewards give
/// their common value exactly.
double mean_baseline(const std::vector<double>& rewards);

/// -(1/k) sum_i (r_i - b) log p(w_i); rewards are constants.
template <typename Scalar>
Tensor<Scalar> scst_loss(const RLBatch<Scalar>& batch);

}  // namespace grit::train
