#pragma once

#include <functional>
#include <iosfwd>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <Eigen/SparseLU>

#include "bulksurf/jet.hpp"
#include "bulksurf/model.hpp"
#include "bulksurf/operators.hpp"

namespace bulksurf {

/// Explicitly treated right-hand side E(X, t). Rates are added into `out`,
/// which has the layout of `x`.
class ExplicitTerms {
 public:
  virtual ~ExplicitTerms() = default;
  virtual void add_rates(const SystemState& x, double t, SystemState& out) const = 0;
  /// Bound on the Lipschitz constant of X -> E(X, t), entering dt_max.
  virtual double lipschitz_bound() const = 0;
  /// out += (dE/dX)^T w. Only needed by the adjoint.
  virtual void add_jacobian_transpose(const SystemState& x, double t, const SystemState& w,
                                      SystemState& out) const;
};

/// p13 f(y, z) in the y equation and q13 g(y_G, z_G) on the surface.
class SemilinearTerms final : public ExplicitTerms {
 public:
  SemilinearTerms(Field p13, Field q13, Nonlinearity f, Nonlinearity g);
  void add_rates(const SystemState& x, double t, SystemState& out) const override;
  double lipschitz_bound() const override;
  void add_jacobian_transpose(const SystemState& x, double t, const SystemState& w,
                              SystemState& out) const override;

 private:
  Field p13_, q13_;
  Nonlinearity f_, g_;
};

/// The four reactions of the positivity system, evaluated at clipped
/// arguments (u+, v+).
class ClippedReactionTerms final : public ExplicitTerms {
 public:
  ClippedReactionTerms(Nonlinearity f1, Nonlinearity f2, Nonlinearity g1, Nonlinearity g2);
  void add_rates(const SystemState& x, double t, SystemState& out) const override;
  double lipschitz_bound() const override;

 private:
  Nonlinearity f1_, f2_, g1_, g2_;
};

/// State-independent sources (f1, f2, g1, g2)(t) placed in the y, z, y_G, z_G
/// equations.
class SourceTerms final : public ExplicitTerms {
 public:
  using Callback = std::function<void(double t, SystemState& out)>;
  explicit SourceTerms(Callback add_sources);
  void add_rates(const SystemState& x, double t, SystemState& out) const override;
  double lipschitz_bound() const override { return 0.0; }
  void add_jacobian_transpose(const SystemState&, double, const SystemState&,
                              SystemState&) const override {}

 private:
  Callback add_;
};

using TermList = std::vector<std::shared_ptr<const ExplicitTerms>>;

/// Implicit Euler for diffusion, flux coupling and the linear potentials,
/// forward Euler for the explicit terms:
///   (M - dt A) X^{n+1} = M X^n + dt M E(X^n, t_n),
/// with X = [y | y_G | z | z_G]. The matrix is factored once.
class ImexStepper {
 public:
  ImexStepper(const Mesh& mesh, const DiffusionSpec& diffusion, const PotentialSet& potentials,
              TermList terms, double dt);

  const Mesh& mesh() const { return *mesh_; }
  double dt() const { return dt_; }
  /// 0.5 / L with L the largest explicit Lipschitz bound or linear potential.
  double dt_max() const { return dt_max_; }
  int dimension() const { return static_cast<int>(mass_.size()); }

  SystemState step(const SystemState& x) const;
  /// ceil(T_end / dt) steps from `init`; states.front() == init.
  Trajectory solve(const SystemState& init, double T_end) const;
  Trajectory solve_steps(const SystemState& init, int n_steps) const;

  Field pack(const SystemState& x) const;
  SystemState unpack(const Field& v, double t) const;

  /// E(X, t) summed over all terms, packed.
  Field explicit_rates(const SystemState& x, double t) const;
  /// (dE/dX)^T w summed over all terms, packed.
  Field explicit_jacobian_transpose(const SystemState& x, double t, const Field& w) const;

  const SparseMatrix& system_matrix() const { return system_; }
  /// Generator A = K + M P of the implicit part.
  const SparseMatrix& generator() const { return generator_; }
  const Field& mass() const { return mass_; }
  /// S^{-T} b, factoring S^T on first use.
  Field solve_transpose(const Field& b) const;

  /// Largest off-diagonal entry of the system matrix; <= 0 for an M-matrix pattern.
  double max_offdiagonal() const;

  const SparseOp& bulk_operator(int species) const { return species == 0 ? bulk1_ : bulk2_; }
  const SparseOp& surface_operator(int species) const { return species == 0 ? surf1_ : surf2_; }

 private:
  const Mesh* mesh_;
  double dt_;
  double dt_max_;
  TermList terms_;
  SparseOp bulk1_, bulk2_, surf1_, surf2_;
  Field mass_;
  SparseMatrix generator_;
  SparseMatrix system_;
  Eigen::SparseLU<SparseMatrix> lu_;
  mutable std::once_flag transpose_once_;
  mutable std::unique_ptr<Eigen::SparseLU<SparseMatrix>> lu_t_;
};

/// Centered time differences of z on chosen cells at interior time nodes.
struct ObservationRecord {
  std::vector<int> cells;
  std::vector<int> time_nodes;   // trajectory indices n with 0 < n < N
  std::vector<double> times;
  Eigen::MatrixXd values;        // rows: time nodes, cols: cells
  Field cell_weights;            // area * dt per cell

  double squared_norm() const;
  double norm() const;
  /// Same cells and time nodes; throws otherwise.
  ObservationRecord operator-(const ObservationRecord& o) const;
};

/// dz/dt on omega x (t0, t1).
ObservationRecord observe(const Trajectory& traj, const Mesh& mesh, const RegionSet& regions);
/// dz/dt on `cells` at nodes strictly inside (t_lo, t_hi) that have both neighbors.
ObservationRecord observe_window(const Trajectory& traj, const Mesh& mesh,
                                 const std::vector<int>& cells, double t_lo, double t_hi);

/// Sum over both species of the area-weighted bulk and arc-weighted surface totals.
double total_mass(const Mesh& mesh, const SystemState& x);
/// sqrt of the mass-weighted squared norm over all four fields.
double state_norm(const Mesh& mesh, const SystemState& x);

/// Closed-form manufactured problem for the full system with dynamic
/// boundary conditions. Diffusivities and solutions are jets so the sources
/// are exact.
struct ManufacturedProblem {
  std::function<Jet(const JetPoint&)> y, z;
  std::function<Jet(const JetPoint&)> a1, a2, d1, d2;  // functions of x only
  double p11 = 0, p12 = 0, p21 = 0, p22 = 0;
  double q11 = 0, q12 = 0, q21 = 0, q22 = 0;
  double p13 = 0, q13 = 0;
  Nonlinearity f, g;

  /// y* = e^{-t}(1 - |x|^2) + 1, z* = cos(t)(1 + x1 x2) + 1 with variable
  /// diffusivities and all couplings active.
  static ManufacturedProblem standard();
  /// y* = 1 + t, z* = 2 - t/2: the scheme reproduces it up to roundoff.
  static ManufacturedProblem affine_in_time();

  SystemState exact(const Mesh& mesh, double t) const;
  DiffusionSpec diffusion(const Mesh& mesh) const;
  PotentialSet potentials(const Mesh& mesh) const;
  /// Explicit terms: the semilinearity plus the compensating sources.
  TermList terms(const Mesh& mesh, const DiffusionSpec& diffusion) const;
};

struct ConvergenceLevel {
  int n_r = 0;
  int n_theta = 0;
  double dt = 0.0;
  double error = 0.0;
  double order = 0.0;  // vs previous level; 0 for the first
};

struct ConvergenceTable {
  std::vector<ConvergenceLevel> levels;
  double final_order() const { return levels.back().order; }
};

/// Spatial study: error against the exact solution at T, dt tied to the mesh.
ConvergenceTable mms_spatial_convergence(const ManufacturedProblem& prob,
                                         const std::vector<ConvergenceLevel>& levels, double T);
/// Temporal study on one mesh: error against a dt_min/8 reference solution.
ConvergenceTable mms_temporal_convergence(const ManufacturedProblem& prob, int n_r, int n_theta,
                                          const std::vector<double>& dts, double T);

/// Long-format CSV: step,t,kind,index,y,z (kind is "bulk" or "surface").
void write_trajectory_csv(std::ostream& os, const Trajectory& traj);
/// Little-endian doubles after a small header; read_trajectory_binary inverts it.
void write_trajectory_binary(const std::string& path, const Trajectory& traj);
Trajectory read_trajectory_binary(const std::string& path);

}  // namespace bulksurf
