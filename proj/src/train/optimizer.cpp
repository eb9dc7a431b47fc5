#include "grit/train/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace grit::train {

template <typename Scalar>
void Adam<Scalar>::add(const std::string& path, Tensor<Scalar> param, int group) {
  if (contains(path)) throw std::invalid_argument("parameter added twice: " + path);
  Slot s{path, param, group, ad::Array<Scalar>::Zero(param.numel()), ad::Array<Scalar>::Zero(param.numel())};
  slots_.push_back(std::move(s));
}

template <typename Scalar>
bool Adam<Scalar>::contains(const std::string& path) const {
  return std::any_of(slots_.begin(), slots_.end(), [&](const Slot& s) { return s.path == path; });
}

template <typename Scalar>
double Adam<Scalar>::clip_grad_norm(double max_norm) {
  double sq = 0.0;
  for (const auto& s : slots_) {
    if (!s.param.has_grad()) continue;
    sq += s.param.node()->grad.template cast<double>().square().sum();
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const auto factor = static_cast<Scalar>(max_norm / norm);
    for (auto& s : slots_)
      if (s.param.has_grad()) s.param.node()->grad *= factor;
  }
  return norm;
}

template <typename Scalar>
void Adam<Scalar>::step(const std::vector<double>& lr) {
  ++steps_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (auto& s : slots_) {
    if (s.group < 0 || s.group >= static_cast<int>(lr.size())) throw std::out_of_range("no learning rate for group");
    const double rate = lr[static_cast<std::size_t>(s.group)];
    const ad::Array<Scalar> g = s.param.grad();
    auto& p = s.param.mutable_values();
    for (Index i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      const double m = b1 * s.m[i] + (1.0 - b1) * gi;
      const double v = b2 * s.v[i] + (1.0 - b2) * gi * gi;
      s.m[i] = static_cast<Scalar>(m);
      s.v[i] = static_cast<Scalar>(v);
      p[i] = static_cast<Scalar>(p[i] - rate * (m / c1) / (std::sqrt(v / c2) + options_.eps));
    }
  }
}

template <typename Scalar>
void Adam<Scalar>::zero_grad() {
  for (auto& s : slots_) s.param.zero_grad();
}

template <typename Scalar>
void Adam<Scalar>::save(ad::Checkpoint& ckpt, const std::string& prefix) const {
  ckpt.put<double>(prefix + "steps", {1}, ad::Array<double>::Constant(1, static_cast<double>(steps_)));
  for (const auto& s : slots_) {
    ckpt.put<Scalar>(prefix + "m/" + s.path, s.param.shape(), s.m);
    ckpt.put<Scalar>(prefix + "v/" + s.path, s.param.shape(), s.v);
  }
}

template <typename Scalar>
void Adam<Scalar>::load(const ad::Checkpoint& ckpt, const std::string& prefix) {
  steps_ = static_cast<long>(ckpt.get<double>(prefix + "steps", {1})[0]);
  for (auto& s : slots_) {
    s.m = ckpt.get<Scalar>(prefix + "m/" + s.path, s.param.shape());
    s.v = ckpt.get<Scalar>(prefix + "v/" + s.path, s.param.shape());
  }
}

template class Adam<double>;
template class Adam<float>;

}  // namespace grit::train
