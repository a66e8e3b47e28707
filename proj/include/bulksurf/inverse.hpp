#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "bulksurf/forward.hpp"
#include "bulksurf/model.hpp"

namespace bulksurf {

/// Piecewise-constant parametrization: bulk cells grouped into
/// n_radial equal-area bands x n_angular sectors, surface nodes into n_arcs
/// arcs. A cell belongs to the band containing its center.
struct PatchLayout {
  int n_radial = 4;
  int n_angular = 4;
  int n_arcs = 8;
  std::vector<int> cell_patch;  // per bulk cell
  std::vector<int> node_arc;    // per surface node

  static PatchLayout build(const Mesh& mesh, int n_radial = 4, int n_angular = 4, int n_arcs = 8);

  int n_patches() const { return n_radial * n_angular; }
  Field expand_bulk(const Field& patch_values) const;
  Field expand_surface(const Field& arc_values) const;
  /// Sums per-cell (per-node) values over each patch (arc); adjoint of expand.
  Field sum_bulk(const Field& cell_values) const;
  Field sum_surface(const Field& node_values) const;
};

/// The four identified potentials on a PatchLayout. Packed order is
/// [p13 | p21 | q13 | q21].
struct CoefficientVector {
  Field p13, p21;  // per patch
  Field q13, q21;  // per arc
  double R_bound = 10.0;
  double p0 = 0.0;

  static CoefficientVector constant(const PatchLayout& layout, double p13, double p21,
                                    double q13, double q21, double R_bound, double p0);

  int size() const { return static_cast<int>(p13.size() + p21.size() + q13.size() + q21.size()); }
  Field pack() const;
  /// Same shape and bounds as *this, values from `v`.
  CoefficientVector with_values(const Field& v) const;

  /// Clamps into [-R_bound, R_bound], with p21, q21 additionally >= p0.
  CoefficientVector projected() const;
  Field lower_bounds() const;
  Field upper_bounds() const;
  bool admissible() const;
};

/// Which blocks are unknown. Inactive blocks keep their given values.
struct ActiveSet {
  bool p13 = true;
  bool p21 = true;
  bool q13 = true;
  bool q21 = true;

  /// 1 on active packed entries, 0 elsewhere.
  Field mask(const CoefficientVector& c) const;
};

/// Everything needed to run the forward model from t = 0. The potentials
/// p13, p21, q13, q21 in `potentials` are overwritten by coefficients.
struct ModelSetup {
  Mesh mesh;
  RegionSet regions;
  DiffusionSpec diffusion;
  PotentialSet potentials;
  Nonlinearity f, g;
  InitialData init;
  double dt = 0.005;
  int n_steps = 200;
  double r_floor = 0.0;     // initial-data floor of the positivity hypotheses
  double r1 = 0.0;          // lower bound on |f|, |g| at theta
  double memory_budget_bytes = 2.0e9;

  /// Potentials with the four identified fields replaced by their expansions.
  PotentialSet potentials_for(const CoefficientVector& c, const PatchLayout& layout) const;
  Trajectory solve(const PotentialSet& pot) const;
};

struct InverseSetup {
  ModelSetup model;
  PatchLayout layout;
  ActiveSet active;
  CoefficientVector prior;
  double reg_weight = 0.0;
};

/// Forward solve with `truth` and observation on omega x (t0, t1). Noise is
/// N(0, 1) scaled by noise_level times the weighted RMS of the clean record,
/// so its norm is about noise_level * |clean|. Throws ValidationError when
/// the setup fails either assumption validator.
ObservationRecord simulate_twin(const InverseSetup& setup, const CoefficientVector& truth,
                                double noise_level, std::uint64_t seed);

/// Forward solve and observation without validation or noise.
ObservationRecord predict(const InverseSetup& setup, const CoefficientVector& c);

/// 1/2 |predict(c) - obs|^2 + 1/2 reg_weight |c - prior|^2, the penalty over
/// active entries only.
double objective(const InverseSetup& setup, const CoefficientVector& c,
                 const ObservationRecord& obs);

struct ObjectiveGradient {
  double value = 0.0;
  double data_term = 0.0;
  Field gradient;  // packed; zero on inactive entries
};

/// Exact gradient of the discrete objective by a reverse sweep through the
/// transposed IMEX steps over the stored trajectory.
ObjectiveGradient objective_gradient(const InverseSetup& setup, const CoefficientVector& c,
                                     const ObservationRecord& obs);

struct GradientCheckRow {
  int point = 0;
  int direction = 0;
  double finite_difference = 0.0;
  double adjoint = 0.0;
  double relative_error = 0.0;
};

struct GradientCheckReport {
  std::vector<GradientCheckRow> rows;
  double max_relative_error = 0.0;
  double h = 0.0;
};

/// Central differences (J(c + h v) - J(c - h v)) / 2h against g . v for
/// random unit directions on the active entries, at random admissible
/// points around `center`.
GradientCheckReport gradient_check(const InverseSetup& setup, const CoefficientVector& center,
                                   const ObservationRecord& obs, int n_points, int n_directions,
                                   double h, double point_spread, std::uint64_t seed,
                                   int threads);

struct OptimizerConfig {
  int max_iter = 100;
  double tolerance = 1e-10;      // on the projected-gradient inf-norm, absolute
  double rel_tolerance = 1e-10;  // same, relative to the initial value
  int memory = 10;
  int max_backtracks = 30;
  double armijo = 1e-4;
  /// Seed the inverse Hessian with the Gauss-Newton matrix at the initial
  /// guess (one forward solve per active coefficient) instead of gamma * I.
  bool gauss_newton_seed = true;
  int gauss_newton_refresh = 10;  // iterations between rebuilds; 0 = never
  int threads = 0;
};

struct IterationRecord {
  int iter = 0;
  double objective = 0.0;
  double projected_gradient = 0.0;
  double step = 0.0;
  int evaluations = 0;
};

struct ReconstructionResult {
  CoefficientVector coeffs;
  std::vector<IterationRecord> history;
  bool converged = false;
  bool line_search_failed = false;  // best iterate returned
  std::string stop_reason;
};

/// Packed L2 weights of the coefficients: patch areas for p13, p21 and arc
/// lengths for q13, q21.
Field coefficient_weights(const InverseSetup& setup);

/// Projected L-BFGS with Armijo backtracking on the projected path, in the
/// metric of coefficient_weights. The objective history is nonincreasing by
/// construction; tolerances apply to the projected gradient in that metric.
/// With gauss_newton_seed the two-loop recursion starts from the inverse of
/// the Gauss-Newton matrix restricted to the free variables.
ReconstructionResult reconstruct(const InverseSetup& setup, const ObservationRecord& obs,
                                 const CoefficientVector& initial, const OptimizerConfig& opt);

/// Relative L2 error on the active blocks, patch values weighted by patch
/// area (bulk) or arc length (surface).
double relative_coefficient_error(const InverseSetup& setup, const CoefficientVector& estimate,
                                  const CoefficientVector& truth);

void write_history_csv(std::ostream& os, const std::vector<IterationRecord>& history);
void write_coefficients_csv(std::ostream& os, const CoefficientVector& c);

// ---------------------------------------------------------------------------

enum class StabilityMode { forward_from_theta, full_window_regularized };

struct StabilityConfig {
  int n_draws = 20;
  double scale = 1e-3;
  StabilityMode mode = StabilityMode::forward_from_theta;
  std::uint64_t seed = 1;
  int max_resamples = 100;
  /// Full-window mode keeps generalized diffusion modes with eigenvalue
  /// below log(damping_cap) / (theta - t0).
  double damping_cap = 1e2;
  int threads = 0;
};

/// Relative defects of the mid-time identities after one step from the
/// shared state at theta: (y - y~)/dt against (a1 f, l1 g) and (z - z~)/dt
/// against (a2 y~, l2 y~_G). The primary values are measured on the omega
/// cells; the *_full values include every cell and the surface, where a
/// boundary layer of width ~sqrt(dt) appears whenever the surface forcing is
/// not the trace of the bulk forcing. A defect with zero predicted response
/// is reported in absolute terms.
struct MidtimeErrors {
  double y = 0.0;
  double z = 0.0;
  double y_full = 0.0;
  double z_full = 0.0;
};

struct StabilityRecord {
  int draw = 0;
  double delta_norm = 0.0;
  double obs_norm = 0.0;
  double ratio = 0.0;
  double obs_norm_half = 0.0;      // response at scale / 2, same direction
  double linear_response = 0.0;    // 2 * obs_norm_half / obs_norm
  MidtimeErrors midtime;
  double full_window_obs_norm = 0.0;  // full-window mode only
  bool indeterminate = false;
};

struct StabilityReport {
  StabilityMode mode = StabilityMode::forward_from_theta;
  bool experimental = false;
  std::string measurement;  // "half-window variant" or "full window (experimental)"
  double scale = 0.0;
  double theta = 0.0;       // grid node used as the mid time
  std::uint64_t seed = 0;
  int rejected = 0;
  int kept_modes = 0;       // full-window mode only
  std::vector<StabilityRecord> records;
  double max_ratio = 0.0;
  double median_ratio = 0.0;
  double spread = 0.0;      // max / median
  double max_midtime_error = 0.0;       // on omega
  double max_midtime_error_full = 0.0;  // diagnostic, includes the boundary layer
  double max_linear_response_deviation = 0.0;  // max |linear_response - 1|
};

/// Smooth perturbation of the reference potentials at the given scale.
struct Perturbation {
  Field a1, a2;  // bulk: p13, p21 differences
  Field l1, l2;  // surface: q13, q21 differences

  Perturbation scaled(double s) const;
  /// |(a1, l1)| + |(a2, l2)| in the mass-weighted L2 norms.
  double norm(const Mesh& mesh) const;
};

Perturbation sample_perturbation(const Mesh& mesh, double scale, std::uint64_t seed);

MidtimeErrors midtime_identity_errors(const ModelSetup& setup, const Perturbation& pert);

/// Empirical Lipschitz ratio |delta| / |d_t (z - z~)| over random
/// admissible perturbations of the reference potentials in `setup`.
StabilityReport stability_ensemble(const ModelSetup& setup, const StabilityConfig& cfg);

void write_stability_csv(std::ostream& os, const StabilityReport& report);

}  // namespace bulksurf
