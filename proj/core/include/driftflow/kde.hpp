#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "driftflow/types.hpp"

namespace driftflow {

enum class Kernel { gaussian, laplace };

Kernel parse_kernel(std::string_view name);
std::string to_string(Kernel k);

/// Kernel density estimator settings.
///
/// gaussian: k(x, y) = exp(-|x - y|^2 / tau)
/// laplace:  k(x, y) = exp(-|x - y| / tau)
struct KdeConfig {
  Kernel kernel = Kernel::laplace;
  double tau = 0.5;
  bool sinkhorn = false;
  int sinkhorn_iters = 10;
  /// Size of the per-step reference subset drawn from the particle cloud.
  std::optional<Eigen::Index> ref_batch;
  /// Leave the query's own particle out of its reference set.
  bool self_exclusion = true;
  /// laplace only: score = sum_j W_j u_j (norm <= 1) instead of the exact
  /// gradient (1/tau) sum_j W_j u_j.
  bool laplace_unit_score = false;

  void validate() const;
};

/// Density and score estimates at a batch of query points.
struct KdeEval {
  Vector log_q;    // log[(1/N_eff) sum_j k(x, x_j)]
  Matrix score;    // grad log q_hat, or its laplace analogue
  Matrix weights;  // queries x refs coupling rows; empty unless requested
};

/// Below this distance a laplace unit displacement is taken as zero.
inline constexpr double kCoincidentDistance = 1e-12;

double kde_log_density(const KdeConfig& cfg, const Matrix& refs, std::span<const double> x);

/// Single-query score from row-softmax weights. Sinkhorn weights couple all
/// queries, so a config with sinkhorn on must go through kde_evaluate.
Vector kde_score(const KdeConfig& cfg, const Matrix& refs, std::span<const double> x);

/// Kernel-softmax weighted displacement sum_j W_j (x_j - x).
Vector mean_shift(const KdeConfig& cfg, const Matrix& refs, std::span<const double> x);

/// Alternating row/column normalization of a log kernel, entirely in log
/// space, followed by a final row normalization. Rows of the result sum to 1;
/// at convergence columns sum to rows/cols. One iteration is one row pass
/// plus one column pass. Entries may be -inf (excluded pairs).
Matrix sinkhorn_normalize(const Matrix& log_kernel, int iters);

/// Evaluate log q_hat and its score at every query row.
///
/// exclude[i], when given and >= 0, is the index in refs that query i must
/// not see (its own particle). With cfg.sinkhorn the weight rows come from
/// sinkhorn_normalize over the full queries x refs log kernel.
KdeEval kde_evaluate(const KdeConfig& cfg, const Matrix& refs, const Matrix& queries,
                     std::span<const Eigen::Index> exclude = {}, bool keep_weights = false);

}  // namespace driftflow
