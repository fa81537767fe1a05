#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <optional>
#include <variant>

#include "driftflow/drift.hpp"
#include "driftflow/energy_targets.hpp"
#include "driftflow/kde.hpp"
#include "driftflow/types.hpp"

namespace driftflow {

/// Node lattice over [x0, x1] x [y0, y1] (endpoints included). Point index is
/// iy * nx + ix.
struct Grid2D {
  double x0 = -4.5, x1 = 4.5;
  double y0 = -4.5, y1 = 4.5;
  int nx = 80, ny = 80;

  void validate() const;
  double dx() const { return (x1 - x0) / (nx - 1); }
  double dy() const { return (y1 - y0) / (ny - 1); }
  double cell_area() const { return dx() * dy(); }
  double x(int ix) const { return x0 + ix * dx(); }
  double y(int iy) const { return y0 + iy * dy(); }
  Eigen::Index size() const { return Eigen::Index{nx} * ny; }
  Eigen::Index index(int ix, int iy) const { return Eigen::Index{iy} * nx + ix; }
  /// size() x 2 matrix of node coordinates.
  Matrix points() const;
};

struct Thresholds {
  double delta = 0.01;    // p >= delta
  double epsilon = 0.01;  // q_hat <= epsilon
};

/// Everything evaluated on the grid for one sampler snapshot and objective.
struct FieldSet {
  Grid2D grid;
  Objective objective = Objective::rkl;
  double alpha = 0.5;
  Vector log_p, log_q, log_r;
  Vector w;      // drift weight per cell
  Vector kappa;  // compression index
  Matrix score_p, score_q, beta, V;
  std::vector<char> mask;  // under-covered cells
  Thresholds thresholds;

  Vector p() const { return log_p.array().exp(); }
  Vector q() const { return log_q.array().exp(); }
  Eigen::Index mask_count() const;
};

inline constexpr double kBetaTolerance = 1e-8;

/// Fields for a KDE of `refs` (no self-exclusion; grid nodes are not particles).
/// Weights: rkl 1; fkl/chi2/tsallis w(r) divided by its grid mean;
/// lv_gate 2(1 + [m - m_bar]_+) with m = log r and m_bar its grid mean;
/// lv_gate_batchnorm the product of the two.
FieldSet compute_fields(const Grid2D& grid, const GmmSpec& spec, const Matrix& refs, const KdeConfig& kde,
                        Objective objective, double alpha = 0.5, const Thresholds& thr = {});

/// Recompute w and V for another objective, keeping the density fields.
void set_objective(FieldSet& fields, Objective objective, double alpha = 0.5);

/// d/dx F_x + d/dy F_y; central differences inside, second-order one-sided
/// differences on edge nodes.
Vector divergence_fd(const Grid2D& grid, const Matrix& F);

/// kappa = -div(q beta) / (q |beta|^2), zero where |beta| <= tol.
Vector kappa_field(const FieldSet& fields, double tol = kBetaTolerance);

/// Cells with p >= delta and q_hat <= epsilon.
std::vector<char> under_covered_mask(const Vector& log_p, const Vector& log_q, const Thresholds& thr);

/// Soft under-coverage mass: sum p 1{p >= delta} [epsilon - q]_+ dA.
double soft_undercoverage(const Grid2D& grid, const Vector& log_p, const Vector& log_q, const Thresholds& thr);

/// Elasticity: a constant, or one value per cell.
using Elasticity = std::variant<double, Vector>;

/// r w'(r) / w(r) for the f-divergence weights: 0, 1, 2, alpha.
double divergence_elasticity(Objective objective, double alpha = 0.5);
/// Per-cell elasticity of the grid weight used by compute_fields (handles the
/// LV gate, whose weight is not a power of r).
Vector field_elasticity(const FieldSet& fields);

struct RepairScore {
  double elasticity_form = 0.0;  // sum p q w |beta|^2 (kappa - eta) dA
  double direct_form = 0.0;      // sum p (-div(q V)) dA
  Eigen::Index cells = 0;
  bool empty_region = false;
};

enum class Region { mask, full_grid };

/// Both forms of the regional repair score over the mask or the whole grid.
RepairScore repair_score(const FieldSet& fields, const Elasticity& eta, Region region = Region::mask);

struct ProbeConfig {
  GmmSpec target;
  Eigen::Index n = 2000;
  double probe_sigma = 0.8;
  double tau = 0.5;
  Thresholds thresholds;
  double h = 0.05;
  std::uint64_t seed = 0;
  Grid2D grid;
  bool laplace_unit_score = false;
};

struct ProbeReport {
  double G_V = 0.0;
  double G_V_elasticity = 0.0;
  Eigen::Index omega_before = 0;
  Eigen::Index omega_after = 0;
  Eigen::Index omega_boundary = 0;  // mask cells with a non-mask 4-neighbour
  double U_before = 0.0;
  double U_after = 0.0;
  bool degenerate = false;  // empty before-step mask
};

/// Particles ~ N(0, probe_sigma^2 I), laplace KDE at tau, rkl drift, one
/// frozen Euler step of size h.
Matrix probe_particles(const ProbeConfig& cfg);
ProbeReport frozen_probe(const ProbeConfig& cfg);
/// Frozen-probe fields before the step (rkl, laplace KDE at cfg.tau).
FieldSet probe_fields(const ProbeConfig& cfg, const Matrix& particles);

/// max over cells of |(q_{t+h} - q_t)/h + div(q_t V)| for the frozen probe.
double density_response_residual(const ProbeConfig& cfg, double h);

enum class LvCase { nu_q, nu_p, nu_fixed };

/// Reference measure for LV case 3, as grid fields.
struct LvReference {
  Vector log_nu;
  Matrix score_nu;

  static LvReference from_spec(const Grid2D& grid, const GmmSpec& nu);
  /// nu frozen at the current q_hat.
  static LvReference from_q(const FieldSet& fields);
};

/// Exact LV drift per cell. log r_tilde = log p - log q + energy_offset
/// (energy_offset mimics an unknown log Z); expectations are grid quadrature
/// normalized by the total weight of the reference density.
///   nu_q:     2 (1 - z_q) beta
///   nu_p:     2 r (1 + log r_tilde - E_p[log r_tilde]) beta
///   nu_fixed: 2 (nu/q) [beta + (log r_tilde - E_nu[log r_tilde]) (score_nu - score_q)]
Matrix lv_exact_fields(const FieldSet& fields, LvCase which, const LvReference* nu = nullptr,
                       double energy_offset = 0.0);

/// max over grid of |w(r) beta| with analytic densities of p and q.
double fixed_point_residual(const GmmSpec& p, const GmmSpec& q, const Grid2D& grid,
                            Objective objective = Objective::rkl, double alpha = 0.5);

/// Field CSVs: a `# grid ...` metadata line, then one row per node in index
/// order with columns ix,iy,x,y and the value (vector fields: _x and _y).
void write_scalar_field(const std::filesystem::path& path, const Grid2D& grid, const std::string& name,
                        const Vector& values);
void write_vector_field(const std::filesystem::path& path, const Grid2D& grid, const std::string& name,
                        const Matrix& values);

}  // namespace driftflow
