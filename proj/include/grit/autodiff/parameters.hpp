#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "grit/autodiff/tensor.hpp"

namespace grit::ad {

/// 64-bit FNV-1a; used for per-parameter seeds and config digests.
std::uint64_t fnv1a64(std::string_view text);
std::uint64_t splitmix64(std::uint64_t x);

/// Learnable tensors keyed by path ("caption/layer0/self_attn/q/weight").
/// Iteration is sorted by path. Each parameter is initialized from its own
/// stream derived from (seed, path), so adding a parameter never perturbs the
/// initial values of the others.
template <typename Scalar>
class ParameterSet {
 public:
  explicit ParameterSet(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }

  /// U(-bound, bound).
  Tensor<Scalar> uniform(const std::string& path, const Shape& shape, double bound);
  /// N(0, stddev^2).
  Tensor<Scalar> normal(const std::string& path, const Shape& shape, double stddev);
  Tensor<Scalar> constant(const std::string& path, const Shape& shape, double value);
  /// Linear weight (in, out) ~ U(-1/sqrt(in), 1/sqrt(in)).
  Tensor<Scalar> linear_weight(const std::string& path, Index in, Index out);

  bool contains(const std::string& path) const { return params_.count(path) != 0; }
  const Tensor<Scalar>& at(const std::string& path) const;
  const std::map<std::string, Tensor<Scalar>>& entries() const { return params_; }

  Index total_size() const;
  void zero_grad();

 private:
  Tensor<Scalar> insert(const std::string& path, Tensor<Scalar> t);

  std::uint64_t seed_;
  std::map<std::string, Tensor<Scalar>> params_;
};

}  // namespace grit::ad
