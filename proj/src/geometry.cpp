#include "bulksurf/geometry.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "bulksurf/errors.hpp"

namespace bulksurf {

namespace {

Point polar(double r, double theta) { return {r * std::cos(theta), r * std::sin(theta)}; }

}  // namespace

Point Mesh::cell_center(int cell) const {
  return polar(cell_r[cell], cell_theta[cell]);
}

Point Mesh::surface_point(int node) const {
  return radius * outward_normal[node];
}

Mesh build_polar_mesh(int n_r, int n_theta, double radius) {
  require(n_r >= 4, "mesh.n_r must be >= 4 (got " + std::to_string(n_r) + ")");
  require(n_theta >= 8 && n_theta % 2 == 0,
          "mesh.n_theta must be even and >= 8 (got " + std::to_string(n_theta) + ")");
  require(radius > 0.0, "mesh.radius must be positive");

  Mesh m;
  m.n_r = n_r;
  m.n_theta = n_theta;
  m.radius = radius;
  m.dr = radius / n_r;
  m.dtheta = 2.0 * std::numbers::pi / n_theta;

  const int nb = n_r * n_theta;
  m.cell_r.resize(nb);
  m.cell_theta.resize(nb);
  m.cell_areas.resize(nb);
  for (int i = 0; i < n_r; ++i) {
    const double r = (i + 0.5) * m.dr;
    for (int j = 0; j < n_theta; ++j) {
      const int c = m.cell_index(i, j);
      m.cell_r[c] = r;
      m.cell_theta[c] = j * m.dtheta;
      // exact area of the annular sector: (r_out^2 - r_in^2) dtheta / 2 = r dr dtheta
      m.cell_areas[c] = r * m.dr * m.dtheta;
    }
  }

  m.surface_s.resize(n_theta);
  m.surface_weights.resize(n_theta);
  m.trace_map.resize(n_theta);
  m.outward_normal.resize(n_theta);
  for (int j = 0; j < n_theta; ++j) {
    const double th = j * m.dtheta;
    m.surface_s[j] = radius * th;
    m.surface_weights[j] = radius * m.dtheta;
    m.trace_map[j] = m.cell_index(n_r - 1, j);
    m.outward_normal[j] = {std::cos(th), std::sin(th)};
  }

  // Radial faces between rings i and i+1; the innermost ring meets at the
  // origin through faces of zero length, so no face is generated there.
  for (int i = 0; i + 1 < n_r; ++i) {
    const double rf = (i + 1) * m.dr;
    for (int j = 0; j < n_theta; ++j) {
      m.faces.push_back({m.cell_index(i, j), m.cell_index(i + 1, j), rf * m.dtheta, m.dr,
                         polar(rf, j * m.dtheta)});
    }
  }
  for (int i = 0; i < n_r; ++i) {
    const double r = (i + 0.5) * m.dr;
    for (int j = 0; j < n_theta; ++j) {
      const int jn = (j + 1) % n_theta;
      m.faces.push_back({m.cell_index(i, j), m.cell_index(i, jn), m.dr, r * m.dtheta,
                         polar(r, (j + 0.5) * m.dtheta)});
    }
  }
  return m;
}

Field RegionSet::omega_mask(const Mesh& mesh) const {
  Field mask = Field::Zero(mesh.n_bulk());
  for (int c : omega) mask[c] = 1.0;
  return mask;
}

double RegionSet::omega_area(const Mesh& mesh) const {
  double a = 0.0;
  for (int c : omega) a += mesh.cell_areas[c];
  return a;
}

RegionSet build_regions(const Mesh& mesh, double rho_prime, double rho_dprime,
                        double rho_omega, double t0, double t1) {
  require(rho_prime > 0.0 && rho_prime < rho_dprime && rho_dprime < rho_omega &&
              rho_omega < mesh.radius,
          "regions: need 0 < rho_prime < rho_dprime < rho_omega < radius");
  require(t0 > 0.0 && t0 < t1, "regions: need 0 < t0 < t1");

  RegionSet reg;
  reg.rho_prime = rho_prime;
  reg.rho_dprime = rho_dprime;
  reg.rho_omega = rho_omega;
  reg.t0 = t0;
  reg.t1 = t1;
  reg.theta = 0.5 * (t0 + t1);
  for (int c = 0; c < mesh.n_bulk(); ++c) {
    const double r = mesh.cell_r[c];
    if (r < rho_prime) reg.omega_prime.push_back(c);
    if (r < rho_dprime) reg.omega_dprime.push_back(c);
    if (r < rho_omega) reg.omega.push_back(c);
  }
  require(!reg.omega_prime.empty(),
          "regions: omega_prime is empty at this mesh resolution (rho_prime too small)");
  require(!reg.omega_dprime.empty(), "regions: omega_dprime is empty at this mesh resolution");
  require(!reg.omega.empty(), "regions: omega is empty at this mesh resolution");
  return reg;
}

}  // namespace bulksurf
