#include "grit/autodiff/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace grit::ad {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'G', 'R', 'I', 'T', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  template <typename T>
  void pod(T v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void bytes(const void* data, std::size_t n) { out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n)); }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::istream& in, std::string file) : in_(in), file_(std::move(file)) {}
  template <typename T>
  T pod() {
    T v{};
    read(&v, sizeof(T));
    return v;
  }
  void read(void* data, std::size_t n) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (!in_) throw std::runtime_error("truncated checkpoint: " + file_);
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    std::string s(n, '\0');
    if (n) read(s.data(), n);
    return s;
  }

 private:
  std::istream& in_;
  std::string file_;
};

std::size_t dtype_size(DType t) { return t == DType::f64 ? 8 : 4; }

template <typename Scalar>
constexpr DType dtype_of() {
  return sizeof(Scalar) == 8 ? DType::f64 : DType::f32;
}

}  // namespace

const Checkpoint::Record* Checkpoint::find(const std::string& path) const {
  for (const auto& r : records) {
    if (r.path == path) return &r;
  }
  return nullptr;
}

template <typename Scalar>
void Checkpoint::put(const std::string& path, const Shape& shape, const Array<Scalar>& values) {
  Record r;
  r.path = path;
  r.shape = shape;
  r.dtype = dtype_of<Scalar>();
  r.raw.resize(static_cast<std::size_t>(values.size()) * sizeof(Scalar));
  if (!r.raw.empty()) std::memcpy(r.raw.data(), values.data(), r.raw.size());
  records.push_back(std::move(r));
}

template <typename Scalar>
void Checkpoint::put(const std::string& path, const Tensor<Scalar>& t) {
  put<Scalar>(path, t.shape(), t.values());
}

template <typename Scalar>
Array<Scalar> Checkpoint::get(const std::string& path, const Shape& expected) const {
  const Record* r = find(path);
  if (!r) throw std::runtime_error("checkpoint has no record " + path);
  if (r->shape != expected) {
    throw std::runtime_error("checkpoint record " + path + " has shape " + shape_string(r->shape) + ", expected " +
                             shape_string(expected));
  }
  const Index n = numel(r->shape);
  Array<Scalar> out(n);
  if (r->dtype == DType::f64) {
    for (Index i = 0; i < n; ++i) {
      double v;
      std::memcpy(&v, r->raw.data() + i * 8, 8);
      out[i] = static_cast<Scalar>(v);
    }
  } else {
    for (Index i = 0; i < n; ++i) {
      float v;
      std::memcpy(&v, r->raw.data() + i * 4, 4);
      out[i] = static_cast<Scalar>(v);
    }
  }
  return out;
}

void save_checkpoint(const std::string& file, const Checkpoint& ckpt) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + file);
  Writer w(out);
  w.bytes(kMagic, sizeof(kMagic));
  w.pod(ckpt.format_version);
  w.pod(ckpt.rng_seed);
  w.str(ckpt.config_digest);
  w.str(ckpt.metadata);
  w.pod(static_cast<std::uint32_t>(ckpt.records.size()));
  for (const auto& r : ckpt.records) {
    w.str(r.path);
    w.pod(static_cast<std::uint8_t>(r.dtype));
    w.pod(static_cast<std::uint32_t>(r.shape.size()));
    for (Index d : r.shape) w.pod(static_cast<std::uint64_t>(d));
    w.bytes(r.raw.data(), r.raw.size());
  }
  if (!out) throw std::runtime_error("failed writing checkpoint " + file);
}

Checkpoint load_checkpoint(const std::string& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + file);
  Reader r(in, file);
  char magic[8];
  r.read(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw std::runtime_error("not a checkpoint file: " + file);
  Checkpoint ckpt;
  ckpt.format_version = r.pod<std::uint32_t>();
  if (ckpt.format_version != Checkpoint::kFormatVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(ckpt.format_version));
  }
  ckpt.rng_seed = r.pod<std::uint64_t>();
  ckpt.config_digest = r.str();
  ckpt.metadata = r.str();
  const auto count = r.pod<std::uint32_t>();
  ckpt.records.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Checkpoint::Record rec;
    rec.path = r.str();
    const auto dt = r.pod<std::uint8_t>();
    if (dt > 1) throw std::runtime_error("bad dtype in checkpoint record " + rec.path);
    rec.dtype = static_cast<DType>(dt);
    const auto rank = r.pod<std::uint32_t>();
    for (std::uint32_t d = 0; d < rank; ++d) rec.shape.push_back(static_cast<Index>(r.pod<std::uint64_t>()));
    rec.raw.resize(static_cast<std::size_t>(numel(rec.shape)) * dtype_size(rec.dtype));
    if (!rec.raw.empty()) r.read(rec.raw.data(), rec.raw.size());
    ckpt.records.push_back(std::move(rec));
  }
  return ckpt;
}

template <typename Scalar>
void store_parameters(Checkpoint& ckpt, const ParameterSet<Scalar>& params, const std::string& prefix) {
  for (const auto& [path, t] : params.entries()) ckpt.put(prefix + path, t);
}

template <typename Scalar>
void restore_parameters(const Checkpoint& ckpt, ParameterSet<Scalar>& params, const std::string& prefix) {
  for (const auto& [path, t] : params.entries()) {
    Tensor<Scalar> handle = t;
    handle.mutable_values() = ckpt.get<Scalar>(prefix + path, t.shape());
  }
}

template void Checkpoint::put(const std::string&, const Tensor<double>&);
template void Checkpoint::put(const std::string&, const Tensor<float>&);
template void Checkpoint::put(const std::string&, const Shape&, const Array<double>&);
template void Checkpoint::put(const std::string&, const Shape&, const Array<float>&);
template Array<double> Checkpoint::get(const std::string&, const Shape&) const;
template Array<float> Checkpoint::get(const std::string&, const Shape&) const;
template void store_parameters(Checkpoint&, const ParameterSet<double>&, const std::string&);
template void store_parameters(Checkpoint&, const ParameterSet<float>&, const std::string&);
template void restore_parameters(const Checkpoint&, ParameterSet<double>&, const std::string&);
template void restore_parameters(const Checkpoint&, ParameterSet<float>&, const std::string&);

}  // namespace grit::ad
