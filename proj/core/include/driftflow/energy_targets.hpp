#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "driftflow/types.hpp"

namespace driftflow {

/// Diagonal-covariance Gaussian mixture with analytic normalization.
struct GmmSpec {
  int dim = 0;
  std::vector<double> weights;  // length K, sums to 1
  Matrix means;                 // K x dim
  Matrix stds;                  // K x dim, strictly positive

  int num_modes() const { return static_cast<int>(weights.size()); }

  /// Throws std::invalid_argument when an invariant is violated.
  void validate() const;
};

enum class Benchmark { gmm8, gmm40, manymodes8d, twohard16, twohard32 };

Benchmark parse_benchmark(std::string_view name);
std::string to_string(Benchmark b);

/// log p(x), computed with log-sum-exp over components.
double log_density(const GmmSpec& spec, std::span<const double> x);
/// grad_x log p(x) as responsibility-weighted component scores.
Vector score(const GmmSpec& spec, std::span<const double> x);

/// Row-wise versions over an n x dim point cloud.
Vector log_density(const GmmSpec& spec, const Matrix& x);
Matrix score(const GmmSpec& spec, const Matrix& x);
/// Both at once; cheaper than two passes.
void log_density_and_score(const GmmSpec& spec, const Matrix& x, Vector& log_p, Matrix& grad);

/// n i.i.d. draws: component by weight, then diagonal Gaussian.
Matrix sample_exact(const GmmSpec& spec, Eigen::Index n, std::uint64_t seed);

/// Index of the nearest mode mean (Euclidean) for each row.
std::vector<int> nearest_mode(const GmmSpec& spec, const Matrix& x);

GmmSpec build_benchmark(Benchmark name);

/// Seed used for the pseudo-random benchmark centers.
inline constexpr std::uint64_t kBenchmarkCenterSeed = 42;

/// {dim, weights[], means[][], stds[][]}
nlohmann::json to_json(const GmmSpec& spec);
GmmSpec gmm_from_json(const nlohmann::json& j);

}  // namespace driftflow
