#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace logo {

/// Derives an independent stream seed from (seed, purpose tag, index).
/// Tags are hashed with FNV-1a and mixed with splitmix64 so that the
/// derivation is stable across platforms and standard libraries.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0)
      : engine_(derive_seed(seed, tag, index)) {}

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  /// Uniform index in [0, n).
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace logo
