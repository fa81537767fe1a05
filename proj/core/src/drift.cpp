#include "driftflow/drift.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace driftflow {

namespace {

void check_positive_ratio(double r) {
  if (!(r > 0.0) || !std::isfinite(r)) throw std::invalid_argument("density ratio must be finite and > 0");
}

}  // namespace

Objective parse_objective(std::string_view name) {
  if (name == "rkl") return Objective::rkl;
  if (name == "fkl") return Objective::fkl;
  if (name == "chi2") return Objective::chi2;
  if (name == "tsallis") return Objective::tsallis;
  if (name == "lv" || name == "lv_gate") return Objective::lv_gate;
  if (name == "lv_batchnorm" || name == "lv_gate_batchnorm") return Objective::lv_gate_batchnorm;
  throw std::invalid_argument("unknown objective '" + std::string(name) + "'");
}

std::string to_string(Objective o) {
  switch (o) {
    case Objective::rkl: return "rkl";
    case Objective::fkl: return "fkl";
    case Objective::chi2: return "chi2";
    case Objective::tsallis: return "tsallis";
    case Objective::lv_gate: return "lv_gate";
    case Objective::lv_gate_batchnorm: return "lv_gate_batchnorm";
  }
  return "unknown";
}

bool is_f_divergence(Objective o) {
  return o == Objective::rkl || o == Objective::fkl || o == Objective::chi2 || o == Objective::tsallis;
}

void DriftConfig::validate() const {
  if (objective == Objective::tsallis && (!(alpha > 0.0) || alpha == 1.0 || !std::isfinite(alpha)))
    throw std::invalid_argument("tsallis alpha must be > 0 and != 1");
  if (!std::isfinite(attr_weight)) throw std::invalid_argument("attr_weight must be finite");
  if (!(drift_scale > 0.0) || !std::isfinite(drift_scale))
    throw std::invalid_argument("drift_scale must be > 0");
  if (w_max && !(*w_max > 0.0)) throw std::invalid_argument("w_max must be > 0");
}

Matrix beta_tilde(double attr_weight, const Matrix& score_p, const Matrix& score_q) {
  if (score_p.rows() != score_q.rows() || score_p.cols() != score_q.cols())
    throw std::invalid_argument("score_p and score_q shapes differ");
  return attr_weight * score_p - score_q;
}

double f_weight(Objective objective, double r, double alpha) {
  check_positive_ratio(r);
  switch (objective) {
    case Objective::rkl: return 1.0;
    case Objective::fkl: return r;
    case Objective::chi2: return 2.0 * r * r;
    case Objective::tsallis: return alpha * std::pow(r, alpha);
    default: throw std::invalid_argument("f_weight is defined for f-divergence objectives only");
  }
}

double log_f_weight(Objective objective, double log_r, double alpha) {
  if (!std::isfinite(log_r)) throw std::invalid_argument("log density ratio must be finite");
  switch (objective) {
    case Objective::rkl: return 0.0;
    case Objective::fkl: return log_r;
    case Objective::chi2: return std::numbers::ln2 + 2.0 * log_r;
    case Objective::tsallis: return std::log(alpha) + alpha * log_r;
    default: throw std::invalid_argument("f_weight is defined for f-divergence objectives only");
  }
}

Vector batch_self_normalize(const Vector& raw_weights) {
  if (raw_weights.size() == 0) throw std::invalid_argument("empty weight batch");
  if ((raw_weights.array() < 0.0).any() || !raw_weights.allFinite())
    throw std::invalid_argument("raw weights must be finite and nonnegative");
  const double mean = raw_weights.mean();
  if (!(mean > 0.0)) throw std::invalid_argument("degenerate batch: all weights are zero");
  return raw_weights / mean;
}

Vector batch_self_normalize_log(const Vector& log_weights) {
  if (log_weights.size() == 0) throw std::invalid_argument("empty weight batch");
  const double m = log_weights.maxCoeff();
  if (!std::isfinite(m)) throw std::invalid_argument("log weights must be finite");
  const double log_mean =
      m + std::log((log_weights.array() - m).exp().sum()) - std::log(static_cast<double>(log_weights.size()));
  return (log_weights.array() - log_mean).exp().matrix();
}

Vector lv_gate_coefficients(const Vector& m, double m_bar) {
  return (2.0 * (1.0 + (m.array() - m_bar).max(0.0))).matrix();
}

Matrix lv_gate(const Vector& m, double m_bar, const Matrix& betas, const std::optional<Vector>& batchnorm_w) {
  if (m.size() != betas.rows()) throw std::invalid_argument("lv_gate: m and betas disagree on batch size");
  Vector c = lv_gate_coefficients(m, m_bar);
  if (batchnorm_w) {
    if (batchnorm_w->size() != m.size()) throw std::invalid_argument("lv_gate: batchnorm weight size mismatch");
    c = c.cwiseProduct(*batchnorm_w);
  }
  return c.asDiagonal() * betas;
}

DriftBatch assemble_drift(const DriftConfig& cfg, const Vector& energies, const Vector& log_q,
                          const Matrix& score_p, const Matrix& score_q) {
  cfg.validate();
  const Eigen::Index n = score_p.rows();
  if (energies.size() != n || log_q.size() != n)
    throw std::invalid_argument("assemble_drift: batch sizes disagree");

  DriftBatch out;
  out.beta_tilde = beta_tilde(cfg.attr_weight, score_p, score_q);
  const Vector m = -energies - log_q;  // log r_tilde
  if (cfg.objective != Objective::rkl && !m.allFinite())
    throw std::invalid_argument("assemble_drift: non-finite log density ratio");

  auto normalized_f = [&](Objective f) {
    Vector logw(n);
    for (Eigen::Index i = 0; i < n; ++i) logw[i] = log_f_weight(f, m[i], cfg.alpha);
    Vector w = batch_self_normalize_log(logw);
    if (cfg.w_max) w = w.cwiseMin(*cfg.w_max);
    return w;
  };

  switch (cfg.objective) {
    case Objective::rkl:
      out.weights = Vector::Ones(n);
      break;
    case Objective::fkl:
    case Objective::chi2:
    case Objective::tsallis:
      out.weights = normalized_f(cfg.objective);
      break;
    case Objective::lv_gate:
      out.weights = lv_gate_coefficients(m, m.mean());
      break;
    case Objective::lv_gate_batchnorm:
      out.weights = lv_gate_coefficients(m, m.mean()).cwiseProduct(normalized_f(Objective::fkl));
      break;
  }
  out.weights *= cfg.drift_scale;
  out.V = out.weights.asDiagonal() * out.beta_tilde;
  return out;
}

}  // namespace driftflow
