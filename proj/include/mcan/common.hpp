// Shared error types, mask alias and small utilities.
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mcan {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes or ranks.
struct ShapeError : Error {
  using Error::Error;
};

// NaN/Inf produced by an op, or an iterative routine failed to converge.
struct NumericError : Error {
  using Error::Error;
};

// Bad argument values (degenerate masks, out-of-range indices, ...).
struct ValueError : Error {
  using Error::Error;
};

// Invalid or unknown configuration keys/values.
struct ConfigError : Error {
  using Error::Error;
};

// Dataset or checkpoint files that fail to parse or validate.
struct DataError : Error {
  using Error::Error;
};

// 1 = valid step, 0 = padding.
using Mask = std::vector<std::uint8_t>;

inline std::size_t mask_count(const Mask& m) {
  std::size_t n = 0;
  for (auto v : m) n += v ? 1 : 0;
  return n;
}

inline Mask full_mask(std::size_t n) { return Mask(n, 1); }

// FNV-1a, used to derive independent per-name RNG streams from one seed.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// splitmix64 finalizer; decorrelates seed ^ name-hash combinations.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace mcan
