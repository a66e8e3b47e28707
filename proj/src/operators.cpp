#include "bulksurf/operators.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <Eigen/Dense>

#include "bulksurf/errors.hpp"

namespace bulksurf {

namespace {

double harmonic(double a, double b) { return 2.0 * a * b / (a + b); }

void check_positive(const Field& f, Eigen::Index n, const char* what) {
  require(f.size() == n, std::string(what) + ": size does not match the mesh");
  require(f.allFinite() && f.minCoeff() > 0.0, std::string(what) + ": diffusivity must be positive");
}

// Boundary half-face transmissibility of surface node j.
double boundary_weight(const Mesh& mesh, const Field& a, int j) {
  return a[mesh.trace_map[j]] * mesh.surface_weights[j] / mesh.boundary_face_distance();
}

}  // namespace

Field SparseOp::apply(const Field& u) const {
  require(u.size() == dimension, "SparseOp::apply: dimension mismatch");
  return (stiffness * u).cwiseQuotient(mass);
}

Field SparseOp::bulk_divergence(const Field& y, const Field& y_gamma) const {
  require(kind == OpKind::bulk_diffusion, "bulk_divergence needs the bulk operator");
  Field u(dimension);
  u << y, y_gamma;
  return apply(u).head(n_bulk);
}

double SparseOp::symmetry_defect() const {
  const SparseMatrix t = stiffness.transpose();
  return (stiffness - t).norm();
}

double SparseOp::max_row_sum() const {
  const Field ones = Field::Ones(dimension);
  const double scale = stiffness.coeffs().cwiseAbs().maxCoeff();
  return (stiffness * ones).cwiseAbs().maxCoeff() / scale;
}

double SparseOp::max_relative_eigenvalue() const {
  // M^{-1/2} K M^{-1/2} shares the spectrum of M^{-1} K.
  const Field s = mass.cwiseSqrt().cwiseInverse();
  const Eigen::MatrixXd dense = s.asDiagonal() * Eigen::MatrixXd(stiffness) * s.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(dense, Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();
  const double scale = ev.cwiseAbs().maxCoeff();
  return scale > 0.0 ? ev.maxCoeff() / scale : 0.0;
}

void SparseOp::write_coordinate(std::ostream& os) const {
  char buf[96];
  for (int k = 0; k < stiffness.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(stiffness, k); it; ++it) {
      std::snprintf(buf, sizeof buf, "%d %d %.17g\n", static_cast<int>(it.row()),
                    static_cast<int>(it.col()), it.value());
      os << buf;
    }
}

SparseOp assemble_bulk_diffusion(const Mesh& mesh, const Field& a) {
  check_positive(a, mesh.n_bulk(), "bulk diffusion");
  const int nb = mesh.n_bulk();
  const int ns = mesh.n_surface();
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(4 * mesh.faces.size() + 4 * ns);
  auto couple = [&](int p, int q, double w) {
    trip.emplace_back(p, q, w);
    trip.emplace_back(q, p, w);
    trip.emplace_back(p, p, -w);
    trip.emplace_back(q, q, -w);
  };
  for (const InteriorFace& f : mesh.faces)
    couple(f.left, f.right, harmonic(a[f.left], a[f.right]) * f.length / f.distance);
  for (int j = 0; j < ns; ++j) couple(mesh.trace_map[j], nb + j, boundary_weight(mesh, a, j));

  SparseOp op;
  op.kind = OpKind::bulk_diffusion;
  op.n_bulk = nb;
  op.n_surface = ns;
  op.dimension = nb + ns;
  op.stiffness.resize(op.dimension, op.dimension);
  op.stiffness.setFromTriplets(trip.begin(), trip.end());
  op.stiffness.makeCompressed();
  op.mass.resize(op.dimension);
  op.mass << mesh.cell_areas, mesh.surface_weights;
  return op;
}

SparseOp assemble_surface_diffusion(const Mesh& mesh, const Field& d) {
  const int ns = mesh.n_surface();
  check_positive(d, ns, "surface diffusion");
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(4 * ns);
  for (int j = 0; j < ns; ++j) {
    const int jn = (j + 1) % ns;
    const double ds = 0.5 * (mesh.surface_weights[j] + mesh.surface_weights[jn]);
    const double w = harmonic(d[j], d[jn]) / ds;
    trip.emplace_back(j, jn, w);
    trip.emplace_back(jn, j, w);
    trip.emplace_back(j, j, -w);
    trip.emplace_back(jn, jn, -w);
  }
  SparseOp op;
  op.kind = OpKind::surface_diffusion;
  op.n_bulk = 0;
  op.n_surface = ns;
  op.dimension = ns;
  op.stiffness.resize(ns, ns);
  op.stiffness.setFromTriplets(trip.begin(), trip.end());
  op.stiffness.makeCompressed();
  op.mass = mesh.surface_weights;
  return op;
}

Field boundary_values(const Mesh& mesh, const Field& bulk) {
  Field out(mesh.n_surface());
  for (int j = 0; j < mesh.n_surface(); ++j) out[j] = bulk[mesh.trace_map[j]];
  return out;
}

Field conormal_flux(const Mesh& mesh, const Field& a, const Field& y, const Field& y_gamma,
                    FluxOrder order) {
  const int ns = mesh.n_surface();
  Field out(ns);
  for (int j = 0; j < ns; ++j) {
    const int c = mesh.trace_map[j];
    if (order == FluxOrder::first) {
      out[j] = a[c] * (y_gamma[j] - y[c]) / mesh.boundary_face_distance();
    } else {
      const int c2 = mesh.cell_index(mesh.n_r - 2, j);
      out[j] = a[c] * (8.0 * y_gamma[j] - 9.0 * y[c] + y[c2]) / (3.0 * mesh.dr);
    }
  }
  return out;
}

double green_identity_residual(const Mesh& mesh, const SparseOp& op, const Field& a,
                               const Field& u, const Field& v, const Field& u_gamma,
                               const Field& v_gamma) {
  const Field lu = op.bulk_divergence(u, u_gamma);
  const double div_term = (mesh.cell_areas.array() * lu.array() * v.array()).sum();

  double grad_term = 0.0, scale = std::abs(div_term);
  for (const InteriorFace& f : mesh.faces) {
    const double af = harmonic(a[f.left], a[f.right]);
    const double t = af * f.length * f.distance * ((u[f.right] - u[f.left]) / f.distance) *
                     ((v[f.right] - v[f.left]) / f.distance);
    grad_term += t;
    scale += std::abs(t);
  }
  const Field flux = conormal_flux(mesh, a, u, u_gamma);
  double bdry_term = 0.0;
  const double h = mesh.boundary_face_distance();
  for (int j = 0; j < mesh.n_surface(); ++j) {
    const int c = mesh.trace_map[j];
    const double t = a[c] * mesh.surface_weights[j] * h * ((u_gamma[j] - u[c]) / h) *
                     ((v_gamma[j] - v[c]) / h);
    grad_term += t;
    scale += std::abs(t);
    const double b = mesh.surface_weights[j] * flux[j] * v_gamma[j];
    bdry_term += b;
    scale += std::abs(b);
  }
  const double res = std::abs(div_term + grad_term - bdry_term);
  return scale > 0.0 ? res / scale : res;
}

double surface_green_residual(const Mesh& mesh, const SparseOp& op, const Field& d,
                              const Field& u, const Field& v) {
  const int ns = mesh.n_surface();
  const Field lu = op.apply(u);
  const double div_term = (mesh.surface_weights.array() * lu.array() * v.array()).sum();
  double grad_term = 0.0, scale = std::abs(div_term);
  for (int j = 0; j < ns; ++j) {
    const int jn = (j + 1) % ns;
    const double ds = 0.5 * (mesh.surface_weights[j] + mesh.surface_weights[jn]);
    const double t = harmonic(d[j], d[jn]) * ds * ((u[jn] - u[j]) / ds) * ((v[jn] - v[j]) / ds);
    grad_term += t;
    scale += std::abs(t);
  }
  const double res = std::abs(div_term + grad_term);
  return scale > 0.0 ? res / scale : res;
}

double surface_divergence_residual(const Mesh& mesh, const Field& x_half, const Field& z) {
  const int ns = mesh.n_surface();
  require(x_half.size() == ns && z.size() == ns, "surface_divergence_residual: size mismatch");
  double lhs = 0.0, rhs = 0.0, scale = 0.0;
  for (int j = 0; j < ns; ++j) {
    const int jp = (j + ns - 1) % ns;
    const int jn = (j + 1) % ns;
    const double ds = mesh.surface_weights[j];
    const double div = (x_half[j] - x_half[jp]) / ds;
    lhs += ds * div * z[j];
    const double dh = 0.5 * (mesh.surface_weights[j] + mesh.surface_weights[jn]);
    const double t = dh * x_half[j] * (z[jn] - z[j]) / dh;
    rhs += t;
    scale += std::abs(ds * div * z[j]) + std::abs(t);
  }
  const double res = std::abs(lhs + rhs);
  return scale > 0.0 ? res / scale : res;
}

double conormal_identity_residual(const Eigen::Matrix2d& A, const Eigen::Vector2d& nu,
                                 const Eigen::Vector2d& grad_psi) {
  require(std::abs(A(0, 1) - A(1, 0)) <= 1e-14 * A.cwiseAbs().maxCoeff(),
          "conormal identity: A must be symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(A);
  require(es.eigenvalues().minCoeff() > 0.0, "conormal identity: A must be positive definite");
  const Eigen::Matrix2d root = es.operatorSqrt();

  const Eigen::Vector2d n = nu / nu.norm();
  const Eigen::Vector2d tang = grad_psi - grad_psi.dot(n) * n;
  const double l1 = std::pow((A * grad_psi).dot(n), 2);
  const double l2 = std::pow((A * tang).dot(n), 2);
  const double r0 = (root * n).squaredNorm();
  const double r1 = (root * grad_psi).squaredNorm();
  const double r2 = (root * tang).squaredNorm();
  const double res = std::abs(l1 - l2 - r0 * (r1 - r2));
  const double scale = l1 + l2 + r0 * (r1 + r2);
  return scale > 0.0 ? res / scale : res;
}

ConormalBoundReport conormal_weight_bound(const Field& a_boundary, double eta0_normal_derivative,
                                           double beta, double c) {
  ConormalBoundReport rep;
  rep.min_margin = std::numeric_limits<double>::infinity();
  rep.max_conormal = -std::numeric_limits<double>::infinity();
  const double bound = beta * eta0_normal_derivative;
  for (Eigen::Index j = 0; j < a_boundary.size(); ++j) {
    const double dn = a_boundary[j] * eta0_normal_derivative;
    rep.conormal.push_back(dn);
    rep.min_margin = std::min(rep.min_margin, bound - dn);
    rep.max_conormal = std::max(rep.max_conormal, dn);
  }
  rep.ok = rep.min_margin >= 0.0 && bound <= -c * beta && -c * beta < 0.0;
  return rep;
}

}  // namespace bulksurf
