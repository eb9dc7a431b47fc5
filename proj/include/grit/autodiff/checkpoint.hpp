#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "grit/autodiff/parameters.hpp"

namespace grit::ad {

enum class DType : std::uint8_t { f64 = 0, f32 = 1 };

/// Versioned binary container.
///
/// Layout (little-endian): magic "GRITCKPT", u32 format_version, u64 rng_seed,
/// string config_digest, string metadata, u32 record count, then per record:
/// string path, u8 dtype, u32 rank, u64 dims[rank], raw values. Strings are a
/// u32 byte length followed by the bytes.
struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  struct Record {
    std::string path;
    Shape shape;
    DType dtype = DType::f64;
    std::vector<std::uint8_t> raw;
  };

  std::uint32_t format_version = kFormatVersion;
  std::uint64_t rng_seed = 0;
  std::string config_digest;
  std::string metadata;  // free-form JSON text (training counters)
  std::vector<Record> records;

  const Record* find(const std::string& path) const;

  template <typename Scalar>
  void put(const std::string& path, const Tensor<Scalar>& t);
  template <typename Scalar>
  void put(const std::string& path, const Shape& shape, const Array<Scalar>& values);
  /// Values converted to Scalar; throws if the record is missing or the shape differs.
  template <typename Scalar>
  Array<Scalar> get(const std::string& path, const Shape& expected) const;
};

void save_checkpoint(const std::string& file, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& file);

/// Records every parameter under `prefix` + path.
template <typename Scalar>
void store_parameters(Checkpoint& ckpt, const ParameterSet<Scalar>& params, const std::string& prefix = "");
/// Overwrites matching parameters in place. Every parameter must be present.
template <typename Scalar>
void restore_parameters(const Checkpoint& ckpt, ParameterSet<Scalar>& params, const std::string& prefix = "");

}  // namespace grit::ad
