#include "driftflow/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "driftflow/io.hpp"
#include "driftflow/rng.hpp"

namespace driftflow {

namespace {

constexpr std::uint64_t kProbeStream = 6;

// Weighted grid average with weights exp(log_w), max-shifted.
double grid_expectation(const Vector& log_w, const Vector& f) {
  const double m = log_w.maxCoeff();
  double num = 0.0, den = 0.0;
  for (Eigen::Index i = 0; i < f.size(); ++i) {
    const double w = std::exp(log_w[i] - m);
    num += w * f[i];
    den += w;
  }
  return num / den;
}

Matrix scale_rows(const Matrix& m, const Vector& s) {
  Matrix out = m;
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.row(i) *= s[i];
  return out;
}

KdeConfig probe_kde(const ProbeConfig& cfg) {
  KdeConfig k;
  k.kernel = Kernel::laplace;
  k.tau = cfg.tau;
  k.sinkhorn = false;
  k.self_exclusion = false;
  k.laplace_unit_score = cfg.laplace_unit_score;
  return k;
}

Vector lv_excess(const Vector& log_r) {
  const double m_bar = log_r.mean();
  return (log_r.array() - m_bar).max(0.0).matrix();
}

}  // namespace

void Grid2D::validate() const {
  if (nx < 3 || ny < 3) throw std::invalid_argument("grid needs at least 3 nodes per axis");
  if (!(x1 > x0) || !(y1 > y0)) throw std::invalid_argument("grid ranges must be increasing");
}

Matrix Grid2D::points() const {
  validate();
  Matrix pts(size(), 2);
  for (int iy = 0; iy < ny; ++iy)
    for (int ix = 0; ix < nx; ++ix) {
      pts(index(ix, iy), 0) = x(ix);
      pts(index(ix, iy), 1) = y(iy);
    }
  return pts;
}

Eigen::Index FieldSet::mask_count() const { return std::count(mask.begin(), mask.end(), char{1}); }

std::vector<char> under_covered_mask(const Vector& log_p, const Vector& log_q, const Thresholds& thr) {
  std::vector<char> mask(log_p.size(), 0);
  for (Eigen::Index i = 0; i < log_p.size(); ++i)
    mask[i] = std::exp(log_p[i]) >= thr.delta && std::exp(log_q[i]) <= thr.epsilon;
  return mask;
}

double soft_undercoverage(const Grid2D& grid, const Vector& log_p, const Vector& log_q, const Thresholds& thr) {
  double u = 0.0;
  for (Eigen::Index i = 0; i < log_p.size(); ++i) {
    const double p = std::exp(log_p[i]);
    if (p >= thr.delta) u += p * std::max(thr.epsilon - std::exp(log_q[i]), 0.0);
  }
  return u * grid.cell_area();
}

Vector divergence_fd(const Grid2D& grid, const Matrix& F) {
  grid.validate();
  if (F.rows() != grid.size() || F.cols() != 2) throw std::invalid_argument("vector field does not match grid");
  const double dx = grid.dx(), dy = grid.dy();
  const int nx = grid.nx, ny = grid.ny;
  Vector div(grid.size());
  for (int iy = 0; iy < ny; ++iy) {
    for (int ix = 0; ix < nx; ++ix) {
      auto fx = [&](int j) { return F(grid.index(j, iy), 0); };
      auto fy = [&](int j) { return F(grid.index(ix, j), 1); };
      double ddx, ddy;
      if (ix == 0)
        ddx = (-3.0 * fx(0) + 4.0 * fx(1) - fx(2)) / (2.0 * dx);
      else if (ix == nx - 1)
        ddx = (3.0 * fx(nx - 1) - 4.0 * fx(nx - 2) + fx(nx - 3)) / (2.0 * dx);
      else
        ddx = (fx(ix + 1) - fx(ix - 1)) / (2.0 * dx);
      if (iy == 0)
        ddy = (-3.0 * fy(0) + 4.0 * fy(1) - fy(2)) / (2.0 * dy);
      else if (iy == ny - 1)
        ddy = (3.0 * fy(ny - 1) - 4.0 * fy(ny - 2) + fy(ny - 3)) / (2.0 * dy);
      else
        ddy = (fy(iy + 1) - fy(iy - 1)) / (2.0 * dy);
      div[grid.index(ix, iy)] = ddx + ddy;
    }
  }
  return div;
}

Vector kappa_field(const FieldSet& f, double tol) {
  const Vector q = f.q();
  const Vector div = divergence_fd(f.grid, scale_rows(f.beta, q));
  Vector kappa = Vector::Zero(q.size());
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    const double b2 = f.beta.row(i).squaredNorm();
    if (std::sqrt(b2) > tol && q[i] > 0.0) kappa[i] = -div[i] / (q[i] * b2);
  }
  return kappa;
}

void set_objective(FieldSet& f, Objective objective, double alpha) {
  const Eigen::Index n = f.log_r.size();
  f.objective = objective;
  f.alpha = alpha;
  switch (objective) {
    case Objective::rkl:
      f.w = Vector::Ones(n);
      break;
    case Objective::fkl:
    case Objective::chi2:
    case Objective::tsallis: {
      Vector lw(n);
      for (Eigen::Index i = 0; i < n; ++i) lw[i] = log_f_weight(objective, f.log_r[i], alpha);
      f.w = batch_self_normalize_log(lw);
      break;
    }
    case Objective::lv_gate:
    case Objective::lv_gate_batchnorm: {
      f.w = lv_gate_coefficients(f.log_r, f.log_r.mean());
      if (objective == Objective::lv_gate_batchnorm) {
        Vector lw(n);
        for (Eigen::Index i = 0; i < n; ++i) lw[i] = log_f_weight(Objective::fkl, f.log_r[i], alpha);
        f.w = f.w.cwiseProduct(batch_self_normalize_log(lw));
      }
      break;
    }
  }
  f.V = scale_rows(f.beta, f.w);
}

FieldSet compute_fields(const Grid2D& grid, const GmmSpec& spec, const Matrix& refs, const KdeConfig& kde,
                        Objective objective, double alpha, const Thresholds& thr) {
  grid.validate();
  if (spec.dim != 2) throw std::invalid_argument("grid diagnostics need a 2-D target");
  FieldSet f;
  f.grid = grid;
  f.thresholds = thr;
  const Matrix pts = grid.points();
  log_density_and_score(spec, pts, f.log_p, f.score_p);
  KdeConfig k = kde;
  k.self_exclusion = false;
  k.ref_batch.reset();
  KdeEval e = kde_evaluate(k, refs, pts);
  f.log_q = std::move(e.log_q);
  f.score_q = std::move(e.score);
  f.log_r = f.log_p - f.log_q;
  f.beta = f.score_p - f.score_q;
  set_objective(f, objective, alpha);
  f.kappa = kappa_field(f);
  f.mask = under_covered_mask(f.log_p, f.log_q, thr);
  return f;
}

double divergence_elasticity(Objective objective, double alpha) {
  switch (objective) {
    case Objective::rkl: return 0.0;
    case Objective::fkl: return 1.0;
    case Objective::chi2: return 2.0;
    case Objective::tsallis: return alpha;
    default: throw std::invalid_argument("LV gate weights have no constant elasticity");
  }
}

Vector field_elasticity(const FieldSet& f) {
  const Eigen::Index n = f.log_r.size();
  if (is_f_divergence(f.objective)) return Vector::Constant(n, divergence_elasticity(f.objective, f.alpha));
  // w = 2(1 + [m - m_bar]_+) with m = log r: r w'/w = 1{m > m_bar} / (1 + m - m_bar)
  const Vector ex = lv_excess(f.log_r);
  Vector eta(n);
  for (Eigen::Index i = 0; i < n; ++i) eta[i] = ex[i] > 0.0 ? 1.0 / (1.0 + ex[i]) : 0.0;
  if (f.objective == Objective::lv_gate_batchnorm) eta.array() += 1.0;
  return eta;
}

RepairScore repair_score(const FieldSet& f, const Elasticity& eta, Region region) {
  RepairScore s;
  const Eigen::Index n = f.log_p.size();
  const Vector p = f.p();
  const Vector q = f.q();
  const Vector div = divergence_fd(f.grid, scale_rows(f.V, q));
  auto eta_at = [&](Eigen::Index i) {
    return std::holds_alternative<double>(eta) ? std::get<double>(eta) : std::get<Vector>(eta)[i];
  };
  if (std::holds_alternative<Vector>(eta) && std::get<Vector>(eta).size() != n)
    throw std::invalid_argument("elasticity field does not match grid");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (region == Region::mask && !f.mask[i]) continue;
    ++s.cells;
    s.direct_form += p[i] * -div[i];
    s.elasticity_form += p[i] * q[i] * f.w[i] * f.beta.row(i).squaredNorm() * (f.kappa[i] - eta_at(i));
  }
  s.direct_form *= f.grid.cell_area();
  s.elasticity_form *= f.grid.cell_area();
  s.empty_region = s.cells == 0;
  return s;
}

Matrix probe_particles(const ProbeConfig& cfg) {
  CounterRng rng(derive_key(cfg.seed, kProbeStream));
  return standard_normal(rng, cfg.n, cfg.target.dim) * cfg.probe_sigma;
}

FieldSet probe_fields(const ProbeConfig& cfg, const Matrix& particles) {
  return compute_fields(cfg.grid, cfg.target, particles, probe_kde(cfg), Objective::rkl, 0.5, cfg.thresholds);
}

namespace {

Matrix euler_step(const ProbeConfig& cfg, const Matrix& x, double h) {
  Vector log_p;
  Matrix score_p;
  log_density_and_score(cfg.target, x, log_p, score_p);
  const KdeEval e = kde_evaluate(probe_kde(cfg), x, x);
  return x + h * (score_p - e.score);
}

Vector grid_log_q(const ProbeConfig& cfg, const Matrix& refs) {
  return kde_evaluate(probe_kde(cfg), refs, cfg.grid.points()).log_q;
}

}  // namespace

ProbeReport frozen_probe(const ProbeConfig& cfg) {
  const Matrix x = probe_particles(cfg);
  const FieldSet f = probe_fields(cfg, x);
  ProbeReport rep;
  const RepairScore g = repair_score(f, 0.0, Region::mask);
  rep.degenerate = g.empty_region;
  rep.G_V = g.direct_form;
  rep.G_V_elasticity = g.elasticity_form;
  rep.omega_before = f.mask_count();
  rep.U_before = soft_undercoverage(f.grid, f.log_p, f.log_q, cfg.thresholds);

  const Grid2D& gr = f.grid;
  for (int iy = 0; iy < gr.ny; ++iy)
    for (int ix = 0; ix < gr.nx; ++ix) {
      if (!f.mask[gr.index(ix, iy)]) continue;
      const bool edge = (ix > 0 && !f.mask[gr.index(ix - 1, iy)]) || (ix + 1 < gr.nx && !f.mask[gr.index(ix + 1, iy)]) ||
                        (iy > 0 && !f.mask[gr.index(ix, iy - 1)]) || (iy + 1 < gr.ny && !f.mask[gr.index(ix, iy + 1)]);
      rep.omega_boundary += edge;
    }

  const Vector log_q_after = grid_log_q(cfg, euler_step(cfg, x, cfg.h));
  const auto mask_after = under_covered_mask(f.log_p, log_q_after, cfg.thresholds);
  rep.omega_after = std::count(mask_after.begin(), mask_after.end(), char{1});
  rep.U_after = soft_undercoverage(f.grid, f.log_p, log_q_after, cfg.thresholds);
  return rep;
}

double density_response_residual(const ProbeConfig& cfg, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("step size must be > 0");
  const Matrix x = probe_particles(cfg);
  const FieldSet f = probe_fields(cfg, x);
  const Vector q0 = f.q();
  const Vector div = divergence_fd(f.grid, scale_rows(f.V, q0));
  const Vector q1 = grid_log_q(cfg, euler_step(cfg, x, h)).array().exp();
  return ((q1 - q0) / h + div).cwiseAbs().maxCoeff();
}

LvReference LvReference::from_spec(const Grid2D& grid, const GmmSpec& nu) {
  LvReference r;
  log_density_and_score(nu, grid.points(), r.log_nu, r.score_nu);
  return r;
}

LvReference LvReference::from_q(const FieldSet& fields) { return {fields.log_q, fields.score_q}; }

Matrix lv_exact_fields(const FieldSet& f, LvCase which, const LvReference* nu, double energy_offset) {
  const Eigen::Index n = f.log_r.size();
  const Vector log_rt = f.log_r.array() + energy_offset;
  Vector coef(n);
  switch (which) {
    case LvCase::nu_q: {
      const double e = grid_expectation(f.log_q, log_rt);
      coef = 2.0 * (1.0 - (log_rt.array() - e));
      return scale_rows(f.beta, coef);
    }
    case LvCase::nu_p: {
      const double e = grid_expectation(f.log_p, log_rt);
      coef = 2.0 * f.log_r.array().exp() * (1.0 + (log_rt.array() - e));
      return scale_rows(f.beta, coef);
    }
    case LvCase::nu_fixed: {
      if (nu == nullptr) throw std::invalid_argument("LV case nu_fixed needs a reference measure");
      if (nu->log_nu.size() != n || nu->score_nu.rows() != n)
        throw std::invalid_argument("LV reference does not match grid");
      const double e = grid_expectation(nu->log_nu, log_rt);
      const Vector centered = log_rt.array() - e;
      const Matrix gamma = scale_rows(nu->score_nu - f.score_q, centered);
      const Vector ratio = (nu->log_nu - f.log_q).array().exp();
      return scale_rows(f.beta + gamma, 2.0 * ratio);
    }
  }
  return {};
}

double fixed_point_residual(const GmmSpec& p, const GmmSpec& q, const Grid2D& grid, Objective objective,
                            double alpha) {
  if (p.dim != 2 || q.dim != 2) throw std::invalid_argument("grid diagnostics need 2-D densities");
  if (!is_f_divergence(objective)) throw std::invalid_argument("fixed-point residual needs an f-divergence weight");
  const Matrix pts = grid.points();
  Vector lp, lq;
  Matrix sp, sq;
  log_density_and_score(p, pts, lp, sp);
  log_density_and_score(q, pts, lq, sq);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    const double w = std::exp(log_f_weight(objective, lp[i] - lq[i], alpha));
    worst = std::max(worst, w * (sp.row(i) - sq.row(i)).norm());
  }
  return worst;
}

namespace {

std::string grid_comment(const Grid2D& g) {
  std::ostringstream os;
  os << "# grid nx=" << g.nx << " ny=" << g.ny << " x0=" << format_double(g.x0) << " x1=" << format_double(g.x1)
     << " y0=" << format_double(g.y0) << " y1=" << format_double(g.y1) << " order=row_major_iy_ix\n";
  return os.str();
}

void write_field(const std::filesystem::path& path, const Grid2D& grid, const std::string& header,
                 const Matrix& values) {
  if (values.rows() != grid.size()) throw std::invalid_argument("field does not match grid: " + path.string());
  std::ostringstream os;
  os << grid_comment(grid) << header << "\n";
  for (int iy = 0; iy < grid.ny; ++iy)
    for (int ix = 0; ix < grid.nx; ++ix) {
      const auto i = grid.index(ix, iy);
      os << ix << ',' << iy << ',' << format_double(grid.x(ix)) << ',' << format_double(grid.y(iy));
      for (Eigen::Index k = 0; k < values.cols(); ++k) os << ',' << format_double(values(i, k));
      os << '\n';
    }
  write_text_atomic(path, os.str());
}

}  // namespace

void write_scalar_field(const std::filesystem::path& path, const Grid2D& grid, const std::string& name,
                        const Vector& values) {
  write_field(path, grid, "ix,iy,x,y," + name, values);
}

void write_vector_field(const std::filesystem::path& path, const Grid2D& grid, const std::string& name,
                        const Matrix& values) {
  if (values.cols() != 2) throw std::invalid_argument("vector field must have two columns");
  write_field(path, grid, "ix,iy,x,y," + name + "_x," + name + "_y", values);
}

}  // namespace driftflow
