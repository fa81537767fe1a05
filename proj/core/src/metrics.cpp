#include "driftflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "driftflow/assignment.hpp"

namespace driftflow {

namespace {

// Exact pairwise squared distances, accumulated coordinate by coordinate.
Matrix squared_distances_exact(const Matrix& x, const Matrix& y) {
  Matrix d(x.rows(), y.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < y.rows(); ++j) d(i, j) = (x.row(i) - y.row(j)).squaredNorm();
  return d;
}

double median(std::vector<double> v) {
  const std::size_t n = v.size();
  auto mid = v.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (n % 2 == 1) return *mid;
  const double hi = *mid;
  const double lo = *std::max_element(v.begin(), mid);
  return 0.5 * (lo + hi);
}

double lse_row(const double* v, Eigen::Index n, Eigen::Index stride) {
  double m = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < n; ++j) m = std::max(m, v[j * stride]);
  double s = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) s += std::exp(v[j * stride] - m);
  return m + std::log(s);
}

}  // namespace

double mmd_unbiased(const Matrix& x, const Matrix& y) {
  if (x.rows() < 2 || y.rows() < 2) throw std::invalid_argument("MMD needs at least 2 points per set");
  if (x.cols() != y.cols()) throw std::invalid_argument("MMD sets have different dimensions");
  const Matrix dxy = squared_distances_exact(x, y);
  const double s2 = median(std::vector<double>(dxy.data(), dxy.data() + dxy.size()));
  const double inv = s2 > 0.0 ? 1.0 / (2.0 * s2) : 0.0;

  auto within = [&](const Matrix& a) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      for (Eigen::Index j = 0; j < a.rows(); ++j)
        if (i != j) s += std::exp(-(a.row(i) - a.row(j)).squaredNorm() * inv);
    const double n = static_cast<double>(a.rows());
    return s / (n * (n - 1.0));
  };
  const double cross = (-inv * dxy.array()).exp().sum() / (static_cast<double>(x.rows()) * y.rows());
  return within(x) + within(y) - 2.0 * cross;
}

double w1_exact(const Matrix& x, const Matrix& y, Eigen::Index cap) {
  if (x.rows() != y.rows()) throw std::invalid_argument("exact W1 needs equal sample counts");
  if (x.cols() != y.cols()) throw std::invalid_argument("W1 sets have different dimensions");
  if (x.rows() == 0) throw std::invalid_argument("exact W1 needs nonempty sets");
  if (x.rows() > cap)
    throw std::invalid_argument("exact W1 limited to n <= " + std::to_string(cap) +
                                " samples; use w2_sinkhorn for larger sets");
  Matrix cost = squared_distances_exact(x, y).cwiseSqrt();
  const auto match = solve_assignment(cost);
  double total = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) total += cost(i, match[i]);
  return total / static_cast<double>(x.rows());
}

double w2_sinkhorn(const Matrix& x, const Matrix& y, double eps, int iters) {
  if (x.rows() == 0 || y.rows() == 0) throw std::invalid_argument("Sinkhorn W2 needs nonempty sets");
  if (x.cols() != y.cols()) throw std::invalid_argument("W2 sets have different dimensions");
  if (!(eps > 0.0)) throw std::invalid_argument("entropic regularization must be > 0");
  const Eigen::Index n = x.rows(), m = y.rows();
  const Matrix C = squared_distances_exact(x, y);
  const double log_a = -std::log(static_cast<double>(n));
  const double log_b = -std::log(static_cast<double>(m));
  Vector f = Vector::Zero(n), g = Vector::Zero(m);
  Matrix S(n, m);

  for (int t = 0; t < iters; ++t) {
    for (Eigen::Index i = 0; i < n; ++i) {
      double* r = S.row(i).data();
      for (Eigen::Index j = 0; j < m; ++j) r[j] = (g[j] - C(i, j)) / eps + log_b;
      f[i] = -eps * lse_row(r, m, 1);
    }
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < m; ++j) S(i, j) = (f[i] - C(i, j)) / eps + log_a;
    for (Eigen::Index j = 0; j < m; ++j) g[j] = -eps * lse_row(S.data() + j, n, m);
  }
  // Round the plan onto the transport polytope (scale rows down, scale
  // columns down, then spread the missing mass as a rank-one correction) so
  // the reported cost is that of a feasible coupling.
  Matrix P(n, m);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j) P(i, j) = std::exp((f[i] + g[j] - C(i, j)) / eps + log_a + log_b);
  const double a = std::exp(log_a), b = std::exp(log_b);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double r = P.row(i).sum();
    if (r > a) P.row(i) *= a / r;
  }
  for (Eigen::Index j = 0; j < m; ++j) {
    const double c = P.col(j).sum();
    if (c > b) P.col(j) *= b / c;
  }
  const Vector er = (a - P.rowwise().sum().array()).max(0.0).matrix();
  const Vector ec = (b - P.colwise().sum().transpose().array()).max(0.0).matrix();
  const double mass = er.sum();
  if (mass > 0.0) P += er * ec.transpose() / mass;
  const double cost = P.cwiseProduct(C).sum();
  return std::sqrt(std::max(cost, 0.0));
}

double coverage_radius(const GmmSpec& spec, int mode) {
  return 3.0 * std::exp(spec.stds.row(mode).array().log().mean());
}

Coverage mode_coverage(const GmmSpec& spec, const Matrix& x) {
  if (x.cols() != spec.dim) throw std::invalid_argument("samples have wrong dimension");
  Coverage c;
  const int K = spec.num_modes();
  c.covered.assign(K, false);
  if (x.rows() == 0) return c;
  for (int k = 0; k < K; ++k) {
    const double r = coverage_radius(spec, k);
    Eigen::Index count = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      if ((x.row(i) - spec.means.row(k)).norm() <= r) ++count;
    if (static_cast<double>(count) / static_cast<double>(x.rows()) >= 0.01) {
      c.covered[k] = true;
      ++c.covered_count;
    }
  }
  c.fraction = static_cast<double>(c.covered_count) / K;
  return c;
}

ModeWeightDiscrepancy mode_weight_discrepancy(const GmmSpec& spec, const Matrix& x) {
  if (x.rows() < 1) throw std::invalid_argument("mode-weight discrepancy needs at least one sample");
  const auto assign = nearest_mode(spec, x);
  const int K = spec.num_modes();
  const double n = static_cast<double>(x.rows());
  ModeWeightDiscrepancy out;
  out.empirical.assign(K, 0.0);
  for (int a : assign) out.empirical[a] += 1.0;
  const double floor = 1.0 / (10.0 * n);
  for (int k = 0; k < K; ++k) {
    out.empirical[k] /= n;
    out.tvd += 0.5 * std::abs(out.empirical[k] - spec.weights[k]);
    const double w = spec.weights[k];
    if (w > 0.0) out.kl_mode += w * std::log(w / std::max(out.empirical[k], floor));
  }
  return out;
}

MetricReport evaluate_samples(const GmmSpec& spec, const Matrix& model, const Matrix& reference) {
  MetricReport r;
  r.mmd = mmd_unbiased(model, reference);
  if (spec.dim == 2 && model.rows() == reference.rows() && model.rows() <= kExactW1Cap) {
    r.w_transport = w1_exact(model, reference);
    r.w_exact = true;
  } else {
    r.w_transport = w2_sinkhorn(model, reference);
    r.w_exact = false;
  }
  r.coverage = mode_coverage(spec, model);
  const auto mw = mode_weight_discrepancy(spec, model);
  r.tvd = mw.tvd;
  r.kl_mode = mw.kl_mode;
  return r;
}

}  // namespace driftflow
