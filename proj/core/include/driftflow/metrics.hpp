#pragma once

#include <vector>

#include "driftflow/energy_targets.hpp"
#include "driftflow/types.hpp"

namespace driftflow {

/// Largest sample count the exact W1 solver accepts.
inline constexpr Eigen::Index kExactW1Cap = 2048;

/// Unbiased MMD^2 with an RBF kernel exp(-|x-y|^2 / (2 s^2)), where s^2 is the
/// median of the cross squared distances. Can be slightly negative.
double mmd_unbiased(const Matrix& x, const Matrix& y);

/// Exact W1 between equal-size clouds: minimum mean Euclidean matching cost.
double w1_exact(const Matrix& x, const Matrix& y, Eigen::Index cap = kExactW1Cap);

/// Entropic OT on squared Euclidean cost with uniform marginals, log-domain
/// dual updates. Returns sqrt(<P, C>) for the final plan.
double w2_sinkhorn(const Matrix& x, const Matrix& y, double eps = 0.05, int iters = 200);

/// Per-mode radius used for coverage: 3 * geometric mean of the mode's stds.
double coverage_radius(const GmmSpec& spec, int mode);

struct Coverage {
  std::vector<bool> covered;
  int covered_count = 0;
  double fraction = 0.0;
};

/// Mode k is covered when at least 1% of samples lie within coverage_radius(k).
Coverage mode_coverage(const GmmSpec& spec, const Matrix& x);

struct ModeWeightDiscrepancy {
  double tvd = 0.0;
  double kl_mode = 0.0;
  std::vector<double> empirical;  // w_hat_k
};

/// Nearest-mode assignment, w_hat_k = count_k / n,
/// tvd = 0.5 sum |w_hat - w|, kl = sum w log(w / max(w_hat, 1/(10n))).
ModeWeightDiscrepancy mode_weight_discrepancy(const GmmSpec& spec, const Matrix& x);

struct MetricReport {
  double mmd = 0.0;
  double w_transport = 0.0;
  bool w_exact = true;  // true: exact W1; false: Sinkhorn W2
  Coverage coverage;
  double tvd = 0.0;
  double kl_mode = 0.0;
};

/// Full report of model samples against reference samples. Two-dimensional
/// targets with n <= kExactW1Cap get exact W1, everything else Sinkhorn W2.
MetricReport evaluate_samples(const GmmSpec& spec, const Matrix& model, const Matrix& reference);

}  // namespace driftflow
