// Copyright 2026 The volfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace volfuse {

/// splitmix64 finalizer; combines seeds into well-separated streams.
constexpr std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

template <typename... Rest>
constexpr std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, Rest... rest) {
  return mix_seed(mix_seed(a, b), rest...);
}

/// Seeded generator whose output is identical across standard libraries:
/// the engine is mt19937_64 and all conversions are done here rather than by
/// std:: distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller.
  double normal();

  /// Engine state as text, for checkpoints.
  std::string state() const;
  void restore(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

/// `count` distinct indices from [0, n), in the order drawn.
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count, Rng& rng);

}  // namespace volfuse
