#include "grit/train/losses.hpp"

#include <stdexcept>

namespace grit::train {

template <typename Scalar>
Tensor<Scalar> target_log_probs(const Tensor<Scalar>& logits, const std::vector<int>& targets, int pad) {
  if (logits.rank() != 3) throw std::invalid_argument("logits must be (B, T, V)");
  const Index B = logits.dim(0), T = logits.dim(1), V = logits.dim(2);
  if (static_cast<Index>(targets.size()) != B * T) {
    throw std::invalid_argument("targets hold " + std::to_string(targets.size()) + " ids for " + std::to_string(B * T) +
                                " logit rows");
  }
  std::vector<Index> flat(targets.size());
  for (Index r = 0; r < B * T; ++r) {
    const int t = targets[static_cast<std::size_t>(r)];
    if (t != pad && (t < 0 || t >= V)) throw std::out_of_range("target id outside the vocabulary");
    flat[static_cast<std::size_t>(r)] = t == pad ? -1 : r * V + t;
  }
  return ad::gather(ad::log_softmax(logits), flat, {B, T});
}

template <typename Scalar>
Tensor<Scalar> xe_loss(const Tensor<Scalar>& logits, const std::vector<int>& targets, int pad) {
  const auto ll = target_log_probs(logits, targets, pad);
  return ad::scale(ad::sum(ll), Scalar(-1.0 / static_cast<double>(logits.dim(0))));
}

double mean_baseline(const std::vector<double>& rewards) {
  if (rewards.empty()) throw std::invalid_argument("no rewards");
  double offset = 0.0;
  for (double r : rewards) offset += r - rewards.front();
  return rewards.front() + offset / static_cast<double>(rewards.size());
}

template <typename Scalar>
RLBatch<Scalar> RLBatch<Scalar>::make(std::vector<std::vector<int>> sentences, std::vector<double> rewards,
                                      Tensor<Scalar> log_probs) {
  if (rewards.size() < 2) throw std::invalid_argument("self-critical loss needs k >= 2 sentences");
  if (sentences.size() != rewards.size() || log_probs.numel() != static_cast<Index>(rewards.size())) {
    throw std::invalid_argument("sentences, rewards and log-probabilities must align");
  }
  RLBatch b;
  b.baseline = mean_baseline(rewards);
  b.sentences = std::move(sentences);
  b.rewards = std::move(rewards);
  b.log_probs = std::move(log_probs);
  return b;
}

template <typename Scalar>
Tensor<Scalar> scst_loss(const RLBatch<Scalar>& batch) {
  const auto k = static_cast<Index>(batch.rewards.size());
  if (k < 2) throw std::invalid_argument("self-critical loss needs k >= 2 sentences");
  if (batch.log_probs.numel() != k) throw std::invalid_argument("one log-probability per sentence required");
  std::vector<Scalar> advantage(static_cast<std::size_t>(k));
  for (Index i = 0; i < k; ++i) {
    advantage[static_cast<std::size_t>(i)] = static_cast<Scalar>(batch.rewards[static_cast<std::size_t>(i)] - batch.baseline);
  }
  const auto a = Tensor<Scalar>::from_vector({k}, advantage);
  return ad::scale(ad::sum(ad::mul(a, ad::reshape(batch.log_probs, {k}))), Scalar(-1.0 / static_cast<double>(k)));
}

#define GRIT_INSTANTIATE(S)                                                                        \
  template Tensor<S> target_log_probs(const Tensor<S>&, const std::vector<int>&, int);           \
  template Tensor<S> xe_loss(const Tensor<S>&, const std::vector<int>&, int);                    \
  template struct RLBatch<S>;                                                                      \
  template Tensor<S> scst_loss(const RLBatch<S>&);
GRIT_INSTANTIATE(double)
GRIT_INSTANTIATE(float)
#undef GRIT_INSTANTIATE

}  // namespace grit::train
