#include "grit/autodiff/parameters.hpp"

#include <random>
#include <stdexcept>

namespace grit::ad {

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

namespace {
std::mt19937_64 stream_for(std::uint64_t seed, const std::string& path) {
  return std::mt19937_64(splitmix64(seed ^ fnv1a64(path)));
}
}  // namespace

template <typename Scalar>
Tensor<Scalar> ParameterSet<Scalar>::insert(const std::string& path, Tensor<Scalar> t) {
  if (!params_.emplace(path, t).second) throw std::invalid_argument("duplicate parameter path: " + path);
  t.set_requires_grad(true);
  return t;
}

template <typename Scalar>
Tensor<Scalar> ParameterSet<Scalar>::uniform(const std::string& path, const Shape& shape, double bound) {
  auto rng = stream_for(seed_, path);
  std::uniform_real_distribution<double> dist(-bound, bound);
  Array<Scalar> v(numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<Scalar>(dist(rng));
  return insert(path, Tensor<Scalar>::from_values(shape, std::move(v)));
}

template <typename Scalar>
Tensor<Scalar> ParameterSet<Scalar>::normal(const std::string& path, const Shape& shape, double stddev) {
  auto rng = stream_for(seed_, path);
  std::normal_distribution<double> dist(0.0, stddev);
  Array<Scalar> v(numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<Scalar>(dist(rng));
  return insert(path, Tensor<Scalar>::from_values(shape, std::move(v)));
}

template <typename Scalar>
Tensor<Scalar> ParameterSet<Scalar>::constant(const std::string& path, const Shape& shape, double value) {
  return insert(path, Tensor<Scalar>::full(shape, static_cast<Scalar>(value)));
}

template <typename Scalar>
Tensor<Scalar> ParameterSet<Scalar>::linear_weight(const std::string& path, Index in, Index out) {
  return uniform(path, {in, out}, 1.0 / std::sqrt(static_cast<double>(in)));
}

template <typename Scalar>
const Tensor<Scalar>& ParameterSet<Scalar>::at(const std::string& path) const {
  auto it = params_.find(path);
  if (it == params_.end()) throw std::out_of_range("no parameter named " + path);
  return it->second;
}

template <typename Scalar>
Index ParameterSet<Scalar>::total_size() const {
  Index n = 0;
  for (const auto& [_, t] : params_) n += t.numel();
  return n;
}

template <typename Scalar>
void ParameterSet<Scalar>::zero_grad() {
  for (auto& [_, t] : params_) {
    Tensor<Scalar> handle = t;
    handle.zero_grad();
  }
}

template class ParameterSet<double>;
template class ParameterSet<float>;

}  // namespace grit::ad
