#ifndef UNMAR_COMMON_HPP
#define UNMAR_COMMON_HPP

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#define FMT_HEADER_ONLY
#include <fmt/format.h>

namespace unmar {

// ===== Errors =====
//
// One exception family; the CLI maps these onto stable exit codes.

class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor/image dimension mismatches; message names the offending axes.
class ShapeError : public Error {
public:
  using Error::Error;
};

/// Invalid configuration (architecture, training, motion spec).
class ConfigError : public Error {
public:
  using Error::Error;
};

/// File and dataset problems (missing inputs, malformed formats).
class DataError : public Error {
public:
  using Error::Error;
};

/// Operation called in the wrong ablation mode.
class ModeError : public Error {
public:
  using Error::Error;
};

/// NaN/Inf encountered during training; carries the offending step.
class NumericError : public Error {
public:
  NumericError(const std::string& msg, int64_t step)
      : Error(msg), step_(step) {}
  int64_t step() const { return step_; }

private:
  int64_t step_;
};

// ===== Deterministic RNG =====
//
// Self-contained splitmix64 generator so that seeded artifacts (datasets,
// weight init, shuffles) are bit-reproducible independent of the standard
// library's distribution implementations.

class Rng {
public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (fresh pair per call, second value dropped).
  double normal() {
    double u1 = 0.0;
    while (u1 <= 1e-300) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  /// Uniform integer in [0, n). n must be positive.
  int64_t uniform_int(int64_t n) {
    return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n));
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
      int64_t j = uniform_int(i + 1);
      std::swap(v[i], v[j]);
    }
  }

private:
  uint64_t state_;
};

/// Derives an independent stream seed from a master seed and a purpose tag.
inline uint64_t derive_seed(uint64_t master, std::string_view tag,
                            uint64_t index = 0) {
  uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a over the tag
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  Rng mix(master ^ h ^ (index * 0x9e3779b97f4a7c15ull));
  return mix.next_u64();
}

/// FNV-1a content hash, used for manifest entries and determinism checks.
inline uint64_t fnv1a(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hash_hex(uint64_t h) { return fmt::format("{:016x}", h); }

}  // namespace unmar

#endif  // UNMAR_COMMON_HPP
