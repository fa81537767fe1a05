#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "driftflow/types.hpp"

namespace driftflow {

enum class Objective { rkl, fkl, chi2, tsallis, lv_gate, lv_gate_batchnorm };

Objective parse_objective(std::string_view name);
std::string to_string(Objective o);

/// True for the f-divergence objectives (those with a weight w(r) = r^2 f''(r)).
bool is_f_divergence(Objective o);

struct DriftConfig {
  Objective objective = Objective::rkl;
  double alpha = 0.5;        // Tsallis order; > 0 and != 1
  double attr_weight = 1.0;  // a_attr in beta_tilde = a_attr * grad log p - s
  double drift_scale = 1.0;
  /// Clip for self-normalized f-weights; nullopt disables clipping.
  std::optional<double> w_max = 100.0;

  void validate() const;
};

struct DriftBatch {
  Matrix beta_tilde;  // N x d
  Vector weights;     // N; V_i = weights_i * beta_tilde_i
  Matrix V;           // N x d
};

/// Row-wise a_attr * score_p - score_q.
Matrix beta_tilde(double attr_weight, const Matrix& score_p, const Matrix& score_q);

/// w(r) = r^2 f''(r): rkl 1, fkl r, chi2 2r^2, tsallis alpha r^alpha.
double f_weight(Objective objective, double r, double alpha = 0.5);
/// log w(r) from log r; finite for any finite log r.
double log_f_weight(Objective objective, double log_r, double alpha = 0.5);

/// w_i / mean_j w_j. Throws on negative entries or a zero mean.
Vector batch_self_normalize(const Vector& raw_weights);
/// Same normalization from log weights, without leaving log space until the end.
Vector batch_self_normalize_log(const Vector& log_weights);

/// V_i = 2 (1 + [m_i - m_bar]_+) beta_i, times batchnorm_w_i when given.
Matrix lv_gate(const Vector& m, double m_bar, const Matrix& betas,
               const std::optional<Vector>& batchnorm_w = std::nullopt);
/// The gate coefficient 2 (1 + [m_i - m_bar]_+) alone.
Vector lv_gate_coefficients(const Vector& m, double m_bar);

/// Build the per-particle drift for cfg.objective.
///
/// energies are E(x_i) up to an unknown additive constant; log_q holds the
/// density estimates l_i. The unnormalized log-ratio is m_i = -E_i - l_i.
DriftBatch assemble_drift(const DriftConfig& cfg, const Vector& energies, const Vector& log_q,
                          const Matrix& score_p, const Matrix& score_q);

}  // namespace driftflow
