// Named learnable parameters. Each tensor is initialized from its own RNG
// stream seeded by (global seed, name), so adding or removing unrelated
// blocks never shifts another block's initial values. Checkpoints store
// 32-bit floats: header (version, tensor count), then per tensor the name
// length, name bytes, rank, extents, and little-endian float data.
#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "mcan/common.hpp"
#include "mcan/tensor.hpp"

namespace mcan {

enum class Init { Zero, One, Scaled };

class ParamRegistry {
 public:
  explicit ParamRegistry(std::uint64_t seed = 0) : seed_(seed) {}

  Tensor add(const std::string& name, std::size_t rows, std::size_t cols, Init init) {
    if (params_.count(name)) throw ValueError("params: duplicate name " + name);
    Tensor t = Tensor::zeros({rows, cols}, /*requires_grad=*/true);
    if (init == Init::One) {
      std::fill(t.mutable_data().begin(), t.mutable_data().end(), 1.0);
    } else if (init == Init::Scaled) {
      // Uniform in [-limit, limit] with limit = sqrt(6 / (fan_in + fan_out)).
      std::mt19937_64 rng(mix64(seed_ ^ fnv1a(name)));
      const double limit = std::sqrt(6.0 / double(rows + cols));
      for (auto& v : t.mutable_data()) {
        const double u = double(rng() >> 11) * 0x1.0p-53;
        v = limit * (2.0 * u - 1.0);
      }
    }
    params_.emplace(name, t);
    return t;
  }

  Tensor get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ValueError("params: unknown name " + name);
    return it->second;
  }

  bool has(const std::string& name) const { return params_.count(name) != 0; }
  std::size_t size() const { return params_.size(); }

  // Sorted by name; the only iteration order used anywhere.
  const std::map<std::string, Tensor>& items() const { return params_; }

  void zero_grads() {
    for (auto& [name, t] : params_) t.zero_grad();
  }

  void set_grad_enabled(bool on) {
    for (auto& [name, t] : params_) t.set_requires_grad(on);
  }

  double grad_norm() const {
    double s = 0.0;
    for (const auto& [name, t] : params_)
      if (t.has_grad())
        for (double g : t.grad()) s += g * g;
    return std::sqrt(s);
  }

  // Scale all gradients so the global norm is at most max_norm.
  void clip_grad_norm(double max_norm) {
    const double norm = grad_norm();
    if (norm <= max_norm || norm == 0.0) return;
    const double f = max_norm / norm;
    for (auto& [name, t] : params_)
      if (t.has_grad())
        for (double& g : t.impl()->grad) g *= f;
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::map<std::string, Tensor> params_;
};

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {(unsigned char)(v & 0xff), (unsigned char)((v >> 8) & 0xff),
                        (unsigned char)((v >> 16) & 0xff), (unsigned char)((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw DataError(std::string("checkpoint: truncated reading ") + what);
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

inline void put_f32(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(os, bits);
}

inline float get_f32(std::istream& is, const char* what) {
  const std::uint32_t bits = get_u32(is, what);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace detail

constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const ParamRegistry& reg, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("checkpoint: cannot open " + path + " for writing");
  detail::put_u32(os, kCheckpointVersion);
  detail::put_u32(os, std::uint32_t(reg.size()));
  for (const auto& [name, t] : reg.items()) {
    detail::put_u32(os, std::uint32_t(name.size()));
    os.write(name.data(), std::streamsize(name.size()));
    detail::put_u32(os, std::uint32_t(t.shape().size()));
    for (auto e : t.shape()) detail::put_u32(os, std::uint32_t(e));
    for (double v : t.data()) detail::put_f32(os, float(v));
  }
  if (!os) throw DataError("checkpoint: write failed for " + path);
}

inline std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("checkpoint: cannot open " + path);
  const std::uint32_t version = detail::get_u32(is, "version");
  if (version != kCheckpointVersion)
    throw DataError("checkpoint: unsupported version " + std::to_string(version));
  const std::uint32_t count = detail::get_u32(is, "tensor count");
  std::map<std::string, Tensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = detail::get_u32(is, "name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw DataError("checkpoint: truncated name");
    const std::uint32_t rank = detail::get_u32(is, "rank");
    std::vector<std::size_t> shape(rank);
    std::size_t numel = 1;
    for (auto& e : shape) {
      e = detail::get_u32(is, "extent");
      numel *= e;
    }
    std::vector<double> data(numel);
    for (auto& v : data) v = double(detail::get_f32(is, "tensor data"));
    if (out.count(name)) throw DataError("checkpoint: duplicate tensor name " + name);
    out.emplace(name, Tensor::from(std::move(shape), std::move(data)));
  }
  return out;
}

// Copy checkpoint values into an existing registry; names and shapes must
// match exactly in both directions.
inline void assign_checkpoint(ParamRegistry& reg, const std::map<std::string, Tensor>& ckpt) {
  if (ckpt.size() != reg.size())
    throw DataError("checkpoint: tensor count " + std::to_string(ckpt.size()) +
                    " does not match model parameter count " + std::to_string(reg.size()));
  for (const auto& [name, src] : ckpt) {
    if (!reg.has(name)) throw DataError("checkpoint: unexpected tensor " + name);
    Tensor dst = reg.get(name);
    if (dst.shape() != src.shape())
      throw DataError("checkpoint: shape mismatch for " + name);
    dst.mutable_data() = src.data();
  }
}

}  // namespace mcan
