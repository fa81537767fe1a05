#include "driftflow/energy_targets.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "driftflow/rng.hpp"

namespace driftflow {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;  // log(2*pi)

void check_dim(const GmmSpec& spec, std::size_t n) {
  if (static_cast<int>(n) != spec.dim)
    throw std::invalid_argument("point has dimension " + std::to_string(n) + ", mixture has " +
                                std::to_string(spec.dim));
}

// Per-component log(w_k N(x; mu_k, diag sigma_k^2)) into out (size K).
void component_log_terms(const GmmSpec& spec, const double* x, std::vector<double>& out) {
  const int K = spec.num_modes();
  out.resize(K);
  for (int k = 0; k < K; ++k) {
    double quad = 0.0;
    double log_det = 0.0;
    for (int j = 0; j < spec.dim; ++j) {
      const double s = spec.stds(k, j);
      const double z = (x[j] - spec.means(k, j)) / s;
      quad += z * z;
      log_det += std::log(s);
    }
    out[k] = std::log(spec.weights[k]) - 0.5 * quad - log_det - 0.5 * spec.dim * kLog2Pi;
  }
}

double log_sum_exp(const std::vector<double>& v) {
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double t : v) s += std::exp(t - m);
  return m + std::log(s);
}

// Fills log p and grad at one point; terms is scratch.
void eval_point(const GmmSpec& spec, const double* x, std::vector<double>& terms, double& log_p,
                double* grad) {
  component_log_terms(spec, x, terms);
  log_p = log_sum_exp(terms);
  for (int j = 0; j < spec.dim; ++j) grad[j] = 0.0;
  for (int k = 0; k < spec.num_modes(); ++k) {
    const double resp = std::exp(terms[k] - log_p);
    if (resp == 0.0) continue;
    for (int j = 0; j < spec.dim; ++j) {
      const double s = spec.stds(k, j);
      grad[j] -= resp * (x[j] - spec.means(k, j)) / (s * s);
    }
  }
}

double softplus(double x) { return std::log1p(std::exp(x)); }

// Centers uniform in [lo, hi]^dim, drawn coordinate-major: all modes'
// coordinate 0 first, then coordinate 1, and so on.
Matrix uniform_centers(int K, int dim, double lo, double hi, std::uint64_t seed) {
  CounterRng rng(seed);
  Matrix means(K, dim);
  for (int j = 0; j < dim; ++j)
    for (int k = 0; k < K; ++k) means(k, j) = rng.uniform(lo, hi);
  return means;
}

GmmSpec isotropic(Matrix means, double sigma, std::vector<double> weights) {
  GmmSpec s;
  s.dim = static_cast<int>(means.cols());
  s.stds = Matrix::Constant(means.rows(), means.cols(), sigma);
  s.means = std::move(means);
  s.weights = std::move(weights);
  return s;
}

GmmSpec two_hard(int d) {
  GmmSpec s;
  s.dim = d;
  s.weights = {2.0 / 3.0, 1.0 / 3.0};
  s.means.resize(2, d);
  s.means.row(0).setConstant(1.0);
  s.means.row(1).setConstant(-1.0);
  s.stds.resize(2, d);
  for (int j = 1; j <= d; ++j) {
    const double sigma = std::sqrt(0.05 * std::pow(10.0, -2.0 * (d - j) / (d - 1.0)));
    s.stds(0, j - 1) = sigma;
    s.stds(1, j - 1) = sigma;
  }
  return s;
}

}  // namespace

void GmmSpec::validate() const {
  if (dim <= 0) throw std::invalid_argument("mixture dimension must be positive");
  const auto K = static_cast<Eigen::Index>(weights.size());
  if (K < 1) throw std::invalid_argument("mixture needs at least one component");
  if (means.rows() != K || means.cols() != dim || stds.rows() != K || stds.cols() != dim)
    throw std::invalid_argument("mixture means/stds shape mismatch");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("mixture weight invalid");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("mixture weights must sum to 1");
  if (!means.allFinite()) throw std::invalid_argument("mixture means must be finite");
  if (!stds.allFinite() || (stds.array() <= 0.0).any())
    throw std::invalid_argument("mixture stds must be finite and positive");
}

Benchmark parse_benchmark(std::string_view name) {
  if (name == "gmm8") return Benchmark::gmm8;
  if (name == "gmm40") return Benchmark::gmm40;
  if (name == "manymodes8d") return Benchmark::manymodes8d;
  if (name == "twohard16") return Benchmark::twohard16;
  if (name == "twohard32") return Benchmark::twohard32;
  throw std::invalid_argument("unknown benchmark '" + std::string(name) + "'");
}

std::string to_string(Benchmark b) {
  switch (b) {
    case Benchmark::gmm8: return "gmm8";
    case Benchmark::gmm40: return "gmm40";
    case Benchmark::manymodes8d: return "manymodes8d";
    case Benchmark::twohard16: return "twohard16";
    case Benchmark::twohard32: return "twohard32";
  }
  return "unknown";
}

double log_density(const GmmSpec& spec, std::span<const double> x) {
  check_dim(spec, x.size());
  std::vector<double> terms;
  component_log_terms(spec, x.data(), terms);
  return log_sum_exp(terms);
}

Vector score(const GmmSpec& spec, std::span<const double> x) {
  check_dim(spec, x.size());
  std::vector<double> terms;
  Vector g(spec.dim);
  double lp;
  eval_point(spec, x.data(), terms, lp, g.data());
  return g;
}

void log_density_and_score(const GmmSpec& spec, const Matrix& x, Vector& log_p, Matrix& grad) {
  check_dim(spec, static_cast<std::size_t>(x.cols()));
  log_p.resize(x.rows());
  grad.resize(x.rows(), spec.dim);
  std::vector<double> terms;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    eval_point(spec, x.row(i).data(), terms, log_p[i], grad.row(i).data());
}

Vector log_density(const GmmSpec& spec, const Matrix& x) {
  check_dim(spec, static_cast<std::size_t>(x.cols()));
  Vector out(x.rows());
  std::vector<double> terms;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    component_log_terms(spec, x.row(i).data(), terms);
    out[i] = log_sum_exp(terms);
  }
  return out;
}

Matrix score(const GmmSpec& spec, const Matrix& x) {
  Vector lp;
  Matrix g;
  log_density_and_score(spec, x, lp, g);
  return g;
}

Matrix sample_exact(const GmmSpec& spec, Eigen::Index n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("sample count must be at least 1");
  spec.validate();
  std::vector<double> cdf(spec.weights.size());
  std::partial_sum(spec.weights.begin(), spec.weights.end(), cdf.begin());
  CounterRng rng(seed);
  Matrix out(n, spec.dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double u = rng.uniform() * cdf.back();
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    const auto k = std::min<std::ptrdiff_t>(it - cdf.begin(), spec.num_modes() - 1);
    for (int j = 0; j < spec.dim; ++j) out(i, j) = spec.means(k, j) + spec.stds(k, j) * rng.normal();
  }
  return out;
}

std::vector<int> nearest_mode(const GmmSpec& spec, const Matrix& x) {
  check_dim(spec, static_cast<std::size_t>(x.cols()));
  std::vector<int> out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (int k = 0; k < spec.num_modes(); ++k) {
      const double d2 = (x.row(i) - spec.means.row(k)).squaredNorm();
      if (d2 < best) {
        best = d2;
        arg = k;
      }
    }
    out[i] = arg;
  }
  return out;
}

GmmSpec build_benchmark(Benchmark name) {
  switch (name) {
    case Benchmark::gmm8: {
      const double c = 2.1;
      Matrix m(8, 2);
      m << 3, 0, -3, 0, 0, 3, 0, -3, c, c, c, -c, -c, c, -c, -c;
      return isotropic(std::move(m), 0.4, std::vector<double>(8, 1.0 / 8.0));
    }
    case Benchmark::gmm40:
      return isotropic(uniform_centers(40, 2, -40.0, 40.0, kBenchmarkCenterSeed), softplus(1.0),
                       std::vector<double>(40, 1.0 / 40.0));
    case Benchmark::manymodes8d: {
      std::vector<double> w(8);
      for (int k = 0; k < 8; ++k) w[k] = std::pow(3.0, k / 7.0);
      const double total = std::accumulate(w.begin(), w.end(), 0.0);
      for (double& v : w) v /= total;
      return isotropic(uniform_centers(8, 8, -8.0, 8.0, kBenchmarkCenterSeed), std::sqrt(0.5),
                       std::move(w));
    }
    case Benchmark::twohard16: return two_hard(16);
    case Benchmark::twohard32: return two_hard(32);
  }
  throw std::invalid_argument("unknown benchmark");
}

nlohmann::json to_json(const GmmSpec& spec) {
  nlohmann::json j;
  j["dim"] = spec.dim;
  j["weights"] = spec.weights;
  auto rows = [](const Matrix& m) {
    nlohmann::json a = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      a.push_back(std::vector<double>(m.row(i).data(), m.row(i).data() + m.cols()));
    return a;
  };
  j["means"] = rows(spec.means);
  j["stds"] = rows(spec.stds);
  return j;
}

GmmSpec gmm_from_json(const nlohmann::json& j) {
  GmmSpec s;
  s.dim = j.at("dim").get<int>();
  s.weights = j.at("weights").get<std::vector<double>>();
  auto read = [&](const nlohmann::json& a) {
    Matrix m(static_cast<Eigen::Index>(a.size()), s.dim);
    for (std::size_t i = 0; i < a.size(); ++i) {
      const auto row = a[i].get<std::vector<double>>();
      if (static_cast<int>(row.size()) != s.dim)
        throw std::invalid_argument("mixture row has wrong dimension");
      for (int c = 0; c < s.dim; ++c) m(static_cast<Eigen::Index>(i), c) = row[c];
    }
    return m;
  };
  s.means = read(j.at("means"));
  s.stds = read(j.at("stds"));
  s.validate();
  return s;
}

}  // namespace driftflow
