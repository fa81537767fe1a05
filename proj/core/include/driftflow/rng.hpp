#pragma once

#include <cstdint>

#include "driftflow/types.hpp"

namespace driftflow {

/// Counter-based 64-bit generator.
///
/// Output k of a stream with key K is splitmix64_mix(K + (k + 1) * 0x9E3779B97F4A7C15).
/// There is no hidden state beyond (key, counter), so any draw can be
/// reproduced in any language from the documented formula. Doubles use the
/// top 53 bits; normals use the cosine branch of Box-Muller, consuming exactly
/// two uniforms per normal.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key, std::uint64_t counter = 0) : key_(key), counter_(counter) {}

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  /// Uniform integer in [0, n) by rejection; n > 0.
  std::uint64_t below(std::uint64_t n);

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

std::uint64_t splitmix64_mix(std::uint64_t z);

/// Derive an independent stream key from a master seed and a path of ids.
std::uint64_t derive_key(std::uint64_t seed, std::uint64_t stream);
std::uint64_t derive_key(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

/// n x d matrix of standard normals, filled row-major.
Matrix standard_normal(CounterRng& rng, Eigen::Index n, Eigen::Index d);

}  // namespace driftflow
