#include "driftflow/kde.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "driftflow/parallel.hpp"

namespace driftflow {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_inputs(const KdeConfig& cfg, const Matrix& refs, Eigen::Index dim) {
  cfg.validate();
  if (refs.rows() == 0) throw std::invalid_argument("KDE reference set is empty");
  if (refs.cols() != dim) throw std::invalid_argument("KDE query/reference dimension mismatch");
}

inline double log_kernel(Kernel kernel, double tau, double sq_dist) {
  return kernel == Kernel::gaussian ? -sq_dist / tau : -std::sqrt(sq_dist) / tau;
}

inline double squared_distance(const double* a, const double* b, Eigen::Index d) {
  double s = 0.0;
  for (Eigen::Index k = 0; k < d; ++k) {
    const double t = a[k] - b[k];
    s += t * t;
  }
  return s;
}

double lse(const double* v, Eigen::Index n) {
  double m = kNegInf;
  for (Eigen::Index j = 0; j < n; ++j) m = std::max(m, v[j]);
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) s += std::exp(v[j] - m);
  return m + std::log(s);
}

double score_prefactor(const KdeConfig& cfg) {
  if (cfg.kernel == Kernel::gaussian) return 2.0 / cfg.tau;
  return cfg.laplace_unit_score ? 1.0 : 1.0 / cfg.tau;
}

// score = prefactor * sum_j W_j g_j with g_j the (unit) displacement.
void accumulate_score(const KdeConfig& cfg, const Matrix& refs, const double* x, const double* w,
                      double* out) {
  const Eigen::Index d = refs.cols();
  for (Eigen::Index k = 0; k < d; ++k) out[k] = 0.0;
  const bool gauss = cfg.kernel == Kernel::gaussian;
  for (Eigen::Index j = 0; j < refs.rows(); ++j) {
    if (w[j] == 0.0) continue;
    const double* y = refs.row(j).data();
    double scale = w[j];
    if (!gauss) {
      const double dist = std::sqrt(squared_distance(x, y, d));
      if (dist < kCoincidentDistance) continue;
      scale /= dist;
    }
    for (Eigen::Index k = 0; k < d; ++k) out[k] += scale * (y[k] - x[k]);
  }
  const double pre = score_prefactor(cfg);
  for (Eigen::Index k = 0; k < d; ++k) out[k] *= pre;
}

// Fills log kernel row for query x; returns number of finite entries.
Eigen::Index fill_log_row(const KdeConfig& cfg, const Matrix& refs, const double* x,
                          Eigen::Index skip, double* row) {
  const Eigen::Index d = refs.cols();
  Eigen::Index used = 0;
  for (Eigen::Index j = 0; j < refs.rows(); ++j) {
    if (j == skip) {
      row[j] = kNegInf;
      continue;
    }
    row[j] = log_kernel(cfg.kernel, cfg.tau, squared_distance(x, refs.row(j).data(), d));
    ++used;
  }
  return used;
}

// Row-softmax weights of one log-kernel row, in place. Returns log sum.
double softmax_in_place(double* row, Eigen::Index n) {
  const double total = lse(row, n);
  for (Eigen::Index j = 0; j < n; ++j) row[j] = std::exp(row[j] - total);
  return total;
}

}  // namespace

Kernel parse_kernel(std::string_view name) {
  if (name == "gaussian") return Kernel::gaussian;
  if (name == "laplace") return Kernel::laplace;
  throw std::invalid_argument("unknown kernel '" + std::string(name) + "'");
}

std::string to_string(Kernel k) { return k == Kernel::gaussian ? "gaussian" : "laplace"; }

void KdeConfig::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw std::invalid_argument("KDE bandwidth must be > 0");
  if (sinkhorn && sinkhorn_iters < 1) throw std::invalid_argument("sinkhorn_iters must be >= 1");
  if (ref_batch && *ref_batch < 1) throw std::invalid_argument("ref_batch must be >= 1");
}

double kde_log_density(const KdeConfig& cfg, const Matrix& refs, std::span<const double> x) {
  check_inputs(cfg, refs, static_cast<Eigen::Index>(x.size()));
  std::vector<double> row(refs.rows());
  fill_log_row(cfg, refs, x.data(), -1, row.data());
  return lse(row.data(), refs.rows()) - std::log(static_cast<double>(refs.rows()));
}

Vector kde_score(const KdeConfig& cfg, const Matrix& refs, std::span<const double> x) {
  check_inputs(cfg, refs, static_cast<Eigen::Index>(x.size()));
  if (cfg.sinkhorn)
    throw std::invalid_argument("sinkhorn weights need the full batch; use kde_evaluate");
  std::vector<double> row(refs.rows());
  fill_log_row(cfg, refs, x.data(), -1, row.data());
  softmax_in_place(row.data(), refs.rows());
  Vector out(refs.cols());
  accumulate_score(cfg, refs, x.data(), row.data(), out.data());
  return out;
}

Vector mean_shift(const KdeConfig& cfg, const Matrix& refs, std::span<const double> x) {
  check_inputs(cfg, refs, static_cast<Eigen::Index>(x.size()));
  std::vector<double> row(refs.rows());
  fill_log_row(cfg, refs, x.data(), -1, row.data());
  softmax_in_place(row.data(), refs.rows());
  Vector out = Vector::Zero(refs.cols());
  for (Eigen::Index j = 0; j < refs.rows(); ++j)
    for (Eigen::Index k = 0; k < refs.cols(); ++k) out[k] += row[j] * (refs(j, k) - x[k]);
  return out;
}

Matrix sinkhorn_normalize(const Matrix& log_kernel, int iters) {
  if (iters < 0) throw std::invalid_argument("sinkhorn iteration count must be >= 0");
  const Eigen::Index M = log_kernel.rows();
  const Eigen::Index N = log_kernel.cols();
  if (M == 0 || N == 0) return Matrix(M, N);
  Matrix L = log_kernel;
  const double log_col_target = std::log(static_cast<double>(M) / static_cast<double>(N));
  std::vector<double> col_max(N), col_sum(N);

  auto row_pass = [&] {
    for (Eigen::Index i = 0; i < M; ++i) {
      double* r = L.row(i).data();
      const double t = lse(r, N);
      for (Eigen::Index j = 0; j < N; ++j) r[j] -= t;
    }
  };
  auto col_pass = [&] {
    std::fill(col_max.begin(), col_max.end(), kNegInf);
    std::fill(col_sum.begin(), col_sum.end(), 0.0);
    for (Eigen::Index i = 0; i < M; ++i) {
      const double* r = L.row(i).data();
      for (Eigen::Index j = 0; j < N; ++j) col_max[j] = std::max(col_max[j], r[j]);
    }
    for (Eigen::Index i = 0; i < M; ++i) {
      const double* r = L.row(i).data();
      for (Eigen::Index j = 0; j < N; ++j)
        if (col_max[j] != kNegInf) col_sum[j] += std::exp(r[j] - col_max[j]);
    }
    for (Eigen::Index j = 0; j < N; ++j) {
      // An all -inf column stays -inf.
      col_sum[j] = col_max[j] == kNegInf ? 0.0 : col_max[j] + std::log(col_sum[j]) - log_col_target;
    }
    for (Eigen::Index i = 0; i < M; ++i) {
      double* r = L.row(i).data();
      for (Eigen::Index j = 0; j < N; ++j) r[j] -= col_sum[j];
    }
  };

  for (int t = 0; t < iters; ++t) {
    row_pass();
    col_pass();
  }
  row_pass();
  return L.array().exp().matrix();
}

KdeEval kde_evaluate(const KdeConfig& cfg, const Matrix& refs, const Matrix& queries,
                     std::span<const Eigen::Index> exclude, bool keep_weights) {
  check_inputs(cfg, refs, queries.cols());
  const Eigen::Index M = queries.rows();
  const Eigen::Index N = refs.rows();
  const Eigen::Index d = queries.cols();
  if (!exclude.empty() && static_cast<Eigen::Index>(exclude.size()) != M)
    throw std::invalid_argument("exclude list must have one entry per query");
  auto skip_of = [&](Eigen::Index i) -> Eigen::Index {
    return exclude.empty() || !cfg.self_exclusion ? -1 : exclude[i];
  };

  KdeEval out;
  out.log_q.resize(M);
  out.score.resize(M, d);

  if (!cfg.sinkhorn) {
    if (keep_weights) out.weights.resize(M, N);
    const bool gauss = cfg.kernel == Kernel::gaussian;
    const double pre = score_prefactor(cfg);
    parallel_for(static_cast<std::size_t>(M), [&](std::size_t b, std::size_t e) {
      std::vector<double> row(N), dist(N);
      for (auto i = static_cast<Eigen::Index>(b); i < static_cast<Eigen::Index>(e); ++i) {
        const double* x = queries.row(i).data();
        const Eigen::Index skip = skip_of(i);
        double m = kNegInf;
        for (Eigen::Index j = 0; j < N; ++j) {
          const double sq = squared_distance(x, refs.row(j).data(), d);
          dist[j] = gauss ? sq : std::sqrt(sq);
          row[j] = j == skip ? kNegInf : -dist[j] / cfg.tau;
          m = std::max(m, row[j]);
        }
        const Eigen::Index used = skip >= 0 && skip < N ? N - 1 : N;
        if (used == 0 || m == kNegInf) throw std::invalid_argument("KDE query has no reference points after exclusion");
        double total = 0.0;
        double* sc = out.score.row(i).data();
        for (Eigen::Index k = 0; k < d; ++k) sc[k] = 0.0;
        for (Eigen::Index j = 0; j < N; ++j) {
          const double wj = std::exp(row[j] - m);
          row[j] = wj;
          total += wj;
          if (wj == 0.0) continue;
          double scale = wj;
          if (!gauss) {
            if (dist[j] < kCoincidentDistance) continue;
            scale /= dist[j];
          }
          const double* y = refs.row(j).data();
          for (Eigen::Index k = 0; k < d; ++k) sc[k] += scale * (y[k] - x[k]);
        }
        for (Eigen::Index k = 0; k < d; ++k) sc[k] *= pre / total;
        out.log_q[i] = m + std::log(total) - std::log(static_cast<double>(used));
        if (keep_weights) {
          double* wr = out.weights.row(i).data();
          for (Eigen::Index j = 0; j < N; ++j) wr[j] = row[j] / total;
        }
      }
    });
    return out;
  }

  Matrix L(M, N);
  std::vector<Eigen::Index> used(M);
  parallel_for(static_cast<std::size_t>(M), [&](std::size_t b, std::size_t e) {
    for (auto i = static_cast<Eigen::Index>(b); i < static_cast<Eigen::Index>(e); ++i)
      used[i] = fill_log_row(cfg, refs, queries.row(i).data(), skip_of(i), L.row(i).data());
  });
  for (Eigen::Index i = 0; i < M; ++i) {
    if (used[i] == 0) throw std::invalid_argument("KDE query has no reference points after exclusion");
    out.log_q[i] = lse(L.row(i).data(), N) - std::log(static_cast<double>(used[i]));
  }
  Matrix W = sinkhorn_normalize(L, cfg.sinkhorn_iters);
  parallel_for(static_cast<std::size_t>(M), [&](std::size_t b, std::size_t e) {
    for (auto i = static_cast<Eigen::Index>(b); i < static_cast<Eigen::Index>(e); ++i)
      accumulate_score(cfg, refs, queries.row(i).data(), W.row(i).data(), out.score.row(i).data());
  });
  if (keep_weights) out.weights = std::move(W);
  return out;
}

}  // namespace driftflow
