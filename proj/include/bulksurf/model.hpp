#pragma once

#include <array>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "bulksurf/geometry.hpp"
#include "bulksurf/state.hpp"

namespace bulksurf {

/// Isotropic bulk diffusivities a_k (A_k = a_k I) and the tangential
/// surface diffusivities d_k on the boundary circle.
struct DiffusionSpec {
  Field a1, a2;  // bulk, per cell
  Field d1, d2;  // surface, per node
  double beta = 1.0;
  double beta_gamma = 1.0;

  static DiffusionSpec uniform(const Mesh& mesh, double a, double d);
  /// Throws ValidationError when sizes mismatch or a floor is violated.
  void validate(const Mesh& mesh) const;
};

/// The ten coupling potentials of the system. p13/q13 multiply the
/// semilinearities, p21/q21 couple y into the z equations.
struct PotentialSet {
  Field p11, p12, p13, p21, p22;  // bulk
  Field q11, q12, q13, q21, q22;  // surface
  double R_bound = 10.0;
  double p0 = 0.0;
  bool stability_admissible = false;

  static PotentialSet zeros(const Mesh& mesh, double R_bound = 10.0, double p0 = 0.0);

  Field& bulk(std::string_view name);
  const Field& bulk(std::string_view name) const;
  Field& surface(std::string_view name);
  const Field& surface(std::string_view name) const;
  Field& by_name(std::string_view name);

  double sup_norm() const;
  /// Largest |value| among the linear potentials (everything but p13, q13).
  double linear_sup_norm() const;
  /// Membership in the admissible set (sup norm <= R_bound) and, when
  /// stability_admissible, the p21, q21 >= p0 floor. Throws ValidationError.
  void validate(const Mesh& mesh) const;
};

/// Scalar semilinearity f(y, z) with its partial derivatives and a
/// Lipschitz bound valid on the working box |y| <= y_max, |z| <= z_max.
struct Nonlinearity {
  enum class Kind { power, custom };

  Kind kind = Kind::custom;
  std::string name;
  int d = 0;
  int delta = 0;
  double y_max = 1.0;
  double z_max = 1.0;
  std::function<double(double, double)> evaluate;
  std::function<std::array<double, 2>(double, double)> partials;
  double lipschitz_bound = 0.0;

  double operator()(double y, double z) const { return evaluate(y, z); }
};

/// (y, z) -> y^d z^delta with lipschitz_bound = sup over the box of |f_y| + |f_z|.
Nonlinearity make_power_nonlinearity(int d, int delta, double y_max, double z_max);
Nonlinearity make_custom_nonlinearity(std::string name,
                                      std::function<double(double, double)> eval,
                                      std::function<std::array<double, 2>(double, double)> partials,
                                      double lipschitz_bound);
Nonlinearity zero_nonlinearity();

struct InitialData {
  Field y0, z0;
  Field y0_gamma, z0_gamma;

  static InitialData constant(const Mesh& mesh, double y, double z);
  /// Samples closed forms at cell centers and at the boundary nodes, so the
  /// surface data is the trace of the bulk data.
  static InitialData from_functions(const Mesh& mesh, const std::function<double(Point)>& y,
                                    const std::function<double(Point)>& z);

  SystemState to_state(double t = 0.0) const;
  /// max |y0(outer cell) - y0_gamma| over both species.
  double trace_mismatch(const Mesh& mesh) const;
  void validate(const Mesh& mesh) const;
};

struct AssumptionViolation {
  std::string family;
  bool on_surface = false;
  int index = -1;
  double margin = 0.0;
};

struct AssumptionIReport {
  bool ok = true;
  double min_initial_floor = 0.0;
  double min_bulk_reaction = 0.0;
  double min_surface_reaction = 0.0;
  double min_coupling_floor = 0.0;
  double min_admissible = 0.0;
  std::vector<AssumptionViolation> violations;
};

/// Pointwise check of the positivity hypotheses on the reference (tilde)
/// data and of admissibility of both potential sets. Report only.
AssumptionIReport validate_assumption_I(const PotentialSet& pot, const PotentialSet& pot_tilde,
                                        const Nonlinearity& f, const Nonlinearity& g,
                                        const InitialData& init_tilde, double r, double p0);

struct AssumptionIIReport {
  bool ok = false;
  double min_abs_f = 0.0;
  double min_abs_g = 0.0;
  bool lower_bound_ok = false;
  double sampled_partial_bound_f = 0.0;
  double sampled_partial_bound_g = 0.0;
  bool lipschitz_ok = false;
  double max_abs_dt_f = 0.0;  // discrete time derivative of f along the trajectory
  double max_abs_dt_g = 0.0;
};

/// Lower bound |f(y~, z~)(theta)| >= r1 (and the surface analogue), plus the
/// sampled partial-derivative bound along the trajectory. Throws
/// ValidationError when theta lies outside the trajectory.
AssumptionIIReport validate_assumption_II(const Nonlinearity& f, const Nonlinearity& g,
                                          const Trajectory& traj_tilde, double theta, double r1);

}  // namespace bulksurf
