#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "bulksurf/forward.hpp"

namespace bulksurf {

/// Reactions of the positivity system: f1, f2 in the bulk, g1, g2 on the surface.
struct ReactionSet {
  Nonlinearity f1, f2, g1, g2;
};

struct QPViolation {
  std::string function;  // "f1", "g1", "f2" or "g2"
  double u = 0.0;
  double v = 0.0;
  double value = 0.0;
};

struct QPReport {
  bool f1_ok = true, f2_ok = true, g1_ok = true, g2_ok = true;
  std::optional<QPViolation> worst_violation;  // most negative value, set iff a flag is false

  bool ok() const { return f1_ok && f2_ok && g1_ok && g2_ok; }
};

/// f1(0, v), g1(0, v) for v in samples and f2(u, 0), g2(u, 0) for u in samples.
QPReport check_qp(const ReactionSet& r, const std::vector<double>& samples);
/// n equispaced points of [0, v_max].
std::vector<double> qp_samples(double v_max, int n);

/// ||u-||^2 over the bulk (area weights) plus the surface (arc weights).
double negative_part_energy(const Mesh& mesh, const Field& bulk, const Field& surface);

struct EnergyPoint {
  double t = 0.0;
  double energy = 0.0;    // y part: ||y-||^2 + ||y_G-||^2
  double energy_z = 0.0;  // same for z
  double min_value = 0.0;
};

struct MonotoneReport {
  bool ok = true;
  double tolerance = 0.0;     // allowed increase per step
  double max_increase = 0.0;  // max_n E(n+1) - E(n)
  int worst_step = -1;
};

/// E(n+1) <= E(n) + tol for all n, tol = 1e-8 scale^2 dt.
MonotoneReport negative_part_energy_monotone(const std::vector<double>& energy, double dt,
                                             double scale);
std::vector<EnergyPoint> energy_series(const Mesh& mesh, const Trajectory& traj);

struct PositivityReport {
  double min_value = 0.0;
  double scale = 0.0;  // max |initial value|
  bool nonnegative = false;  // min_value >= -1e-10 scale
  double max_offdiagonal = 0.0;  // of the implicit matrix; <= 0 is the M-matrix sign pattern
  std::vector<EnergyPoint> series;
  MonotoneReport monotone;    // y part
  MonotoneReport monotone_z;  // z part, reported only
};

/// Solves the positivity system with clipped reaction arguments from
/// nonnegative data. Throws ValidationError when QP fails on `samples` or
/// the data has a negative entry.
PositivityReport positivity_experiment(const Mesh& mesh, const DiffusionSpec& diffusion,
                                       const ReactionSet& reactions, const InitialData& init,
                                       double T_end, double dt,
                                       const std::vector<double>& samples);

/// Same solve without the sign guard on the data, for sign-mixed runs.
PositivityReport run_reaction_system(const Mesh& mesh, const DiffusionSpec& diffusion,
                                     const ReactionSet& reactions, const InitialData& init,
                                     double T_end, double dt);

/// A QP-passing reaction family with bounded Lipschitz constants:
///   f1 = c0 v - c1 u + c2 uv/(1+u+v),  f2 = c3 u - c4 v - c5 uv/(1+u+v),
///   g1 = c6 v - c7 u,                   g2 = c8 u - c9 v + c10,
/// all coefficients nonnegative.
ReactionSet make_qp_family(const std::vector<double>& c);

/// t,E_minus,E_minus_z,min
void write_energy_csv(std::ostream& os, const std::vector<EnergyPoint>& series);

}  // namespace bulksurf
