#include "driftflow/rng.hpp"

#include <cmath>
#include <numbers>

namespace driftflow {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
}

std::uint64_t splitmix64_mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t CounterRng::next_u64() {
  ++counter_;
  return splitmix64_mix(key_ + counter_ * kGolden);
}

double CounterRng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double CounterRng::normal() {
  // 1 - u lies in (0, 1], so the log is finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t CounterRng::below(std::uint64_t n) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return v % n;
}

std::uint64_t derive_key(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64_mix(splitmix64_mix(seed) ^ (stream * kGolden + 0x632BE59BD9B4E019ULL));
}

std::uint64_t derive_key(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  return splitmix64_mix(derive_key(seed, stream) ^ (index * kGolden + 0x8CB92BA72F3D8DD7ULL));
}

Matrix standard_normal(CounterRng& rng, Eigen::Index n, Eigen::Index d) {
  Matrix out(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) out(i, j) = rng.normal();
  return out;
}

}  // namespace driftflow
