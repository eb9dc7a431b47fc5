#pragma once

#include <string>
#include <vector>

#include "grit/autodiff/checkpoint.hpp"

namespace grit::train {

using ad::Index;
using ad::Tensor;

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction and one learning rate per parameter group.
template <typename Scalar>
class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}

  void add(const std::string& path, Tensor<Scalar> param, int group);
  std::size_t size() const { return slots_.size(); }
  long steps() const { return steps_; }
  bool contains(const std::string& path) const;

  /// Global L2 norm of the gradients before clipping; rescales them to
  /// max_norm when larger.
  double clip_grad_norm(double max_norm);
  /// lr[g] applies to parameters of group g.
  void step(const std::vector<double>& lr);
  void zero_grad();

  void save(ad::Checkpoint& ckpt, const std::string& prefix = "adam/") const;
  void load(const ad::Checkpoint& ckpt, const std::string& prefix = "adam/");

 private:
  struct Slot {
    std::string path;
    Tensor<Scalar> param;
    int group = 0;
    ad::Array<Scalar> m, v;
  };
  AdamOptions options_;
  std::vector<Slot> slots_;
  long steps_ = 0;
};

}  // namespace grit::train
