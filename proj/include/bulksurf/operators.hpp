#pragma once

#include <iosfwd>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "bulksurf/geometry.hpp"

namespace bulksurf {

using SparseMatrix = Eigen::SparseMatrix<double>;

enum class OpKind { bulk_diffusion, surface_diffusion };

/// Divergence-form diffusion in the factored form M^{-1} K.
///
/// K is symmetric with zero row sums and nonpositive spectrum; M is the
/// diagonal of control-volume measures. The bulk operator acts on
/// [bulk cells | surface nodes]: its surface rows hold minus the conormal
/// flux, so the ghost values y_gamma are part of the state and the coupled
/// stencil conserves sum(M u) exactly.
struct SparseOp {
  OpKind kind = OpKind::bulk_diffusion;
  int dimension = 0;
  int n_bulk = 0;
  int n_surface = 0;
  SparseMatrix stiffness;
  Field mass;

  /// M^{-1} K u over the full dimension.
  Field apply(const Field& u) const;
  /// Bulk rows of apply() for the pair (y, y_gamma); div(a grad y).
  Field bulk_divergence(const Field& y, const Field& y_gamma) const;

  double symmetry_defect() const;
  /// max_i |sum_j K_ij| / max |K_ij|.
  double max_row_sum() const;
  /// Largest eigenvalue of the symmetric pencil, relative to the largest
  /// magnitude; nonpositive up to roundoff. Dense, for test-size meshes.
  double max_relative_eigenvalue() const;

  /// One "row col value" line per stored entry, 0-based.
  void write_coordinate(std::ostream& os) const;
};

/// Two-point flux operator for div(a grad .) with harmonic face averages
/// and the surface node as ghost state on each boundary half-face.
SparseOp assemble_bulk_diffusion(const Mesh& mesh, const Field& a);

/// Periodic three-point stencil for the tangential operator div_G(d grad_G .).
SparseOp assemble_surface_diffusion(const Mesh& mesh, const Field& d);

enum class FluxOrder { first, second };

/// a (y_gamma - y_outer) / (dr/2) per surface node, or the one-sided
/// quadratic extrapolation through the two outer rings when second order.
Field conormal_flux(const Mesh& mesh, const Field& a, const Field& y, const Field& y_gamma,
                    FluxOrder order = FluxOrder::first);

/// Discrete integration by parts in the bulk:
/// |sum(area Lu v) + sum_faces a grad u . grad v - sum_G (d_nu u) v_gamma| / scale.
/// Face gradients are the flux-consistent two-point differences, boundary
/// half-faces included, so the residual is roundoff.
double green_identity_residual(const Mesh& mesh, const SparseOp& op, const Field& a,
                               const Field& u, const Field& v, const Field& u_gamma,
                               const Field& v_gamma);

/// Periodic summation by parts for the surface operator, relative.
double surface_green_residual(const Mesh& mesh, const SparseOp& op, const Field& d,
                              const Field& u, const Field& v);

/// Surface divergence formula for a tangential field given at the half
/// nodes j + 1/2: |sum ds div_G X z + sum X . grad_G z| / scale.
double surface_divergence_residual(const Mesh& mesh, const Field& x_half, const Field& z);

/// |(A grad psi . nu)^2 - (A grad_G psi . nu)^2
///   - |A^{1/2} nu|^2 (|A^{1/2} grad psi|^2 - |A^{1/2} grad_G psi|^2)|, relative.
/// Throws ValidationError when A is not symmetric positive definite.
double conormal_identity_residual(const Eigen::Matrix2d& A, const Eigen::Vector2d& nu,
                                 const Eigen::Vector2d& grad_psi);

struct ConormalBoundReport {
  bool ok = true;
  double min_margin = 0.0;         // min over nodes of beta d_nu eta0 - d_nu^A eta0
  double max_conormal = 0.0;       // max over nodes of d_nu^A eta0
  std::vector<double> conormal;    // d_nu^A eta0 per node
};

/// For eta0 = 1 - |x|^2 on the unit circle, d_nu^A eta0 = -2 a. Checks
/// d_nu^A eta0 <= beta d_nu eta0 <= -c beta at every node.
ConormalBoundReport conormal_weight_bound(const Field& a_boundary, double eta0_normal_derivative,
                                           double beta, double c);

/// Outer-cell values of a bulk field, one per surface node.
Field boundary_values(const Mesh& mesh, const Field& bulk);

}  // namespace bulksurf
