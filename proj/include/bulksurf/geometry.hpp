#pragma once

#include <array>
#include <vector>

#include <Eigen/Core>

namespace bulksurf {

using Field = Eigen::VectorXd;
using Point = Eigen::Vector2d;

/// Face between two bulk cells of the polar grid.
struct InteriorFace {
  int left;
  int right;
  double length;    // face length
  double distance;  // distance between the two cell centers
  Point midpoint;
};

/// Cell-centered polar finite-volume grid on the disk of radius `radius`,
/// together with the matched periodic grid on the boundary circle.
///
/// Bulk cell (i, j), i in [0, n_r), j in [0, n_theta), has center
/// r_i = (i + 1/2) dr, theta_j = j dtheta and flat index i * n_theta + j.
/// Surface node j sits at angle theta_j and is attached to the outermost
/// cell (n_r - 1, j).
class Mesh {
 public:
  int n_r = 0;
  int n_theta = 0;
  double radius = 1.0;
  double dr = 0.0;
  double dtheta = 0.0;

  Field cell_r;
  Field cell_theta;
  Field cell_areas;
  Field surface_s;        // arc-length positions
  Field surface_weights;  // arc lengths
  std::vector<int> trace_map;
  std::vector<Point> outward_normal;
  std::vector<InteriorFace> faces;

  int n_bulk() const { return n_r * n_theta; }
  int n_surface() const { return n_theta; }
  int cell_index(int i, int j) const { return i * n_theta + j; }
  int ring_of(int cell) const { return cell / n_theta; }
  int sector_of(int cell) const { return cell % n_theta; }

  Point cell_center(int cell) const;
  Point surface_point(int node) const;

  /// Boundary face of node j: length surface_weights[j], center-to-wall
  /// distance dr/2.
  double boundary_face_distance() const { return 0.5 * dr; }

  /// Samples a closed-form function on cell centers / surface nodes.
  template <class F>
  Field sample_bulk(F&& f) const {
    Field out(n_bulk());
    for (int c = 0; c < n_bulk(); ++c) out[c] = f(cell_center(c));
    return out;
  }
  template <class F>
  Field sample_surface(F&& f) const {
    Field out(n_surface());
    for (int j = 0; j < n_surface(); ++j) out[j] = f(surface_point(j));
    return out;
  }

  double area() const { return cell_areas.sum(); }
  double perimeter() const { return surface_weights.sum(); }
};

/// Throws ValidationError when n_r < 4, n_theta < 8 or n_theta is odd.
Mesh build_polar_mesh(int n_r, int n_theta, double radius = 1.0);

/// Concentric observation disks omega' (r < rho_prime), omega'' (r < rho_dprime),
/// omega (r < rho_omega) and the time window (t0, t1) with its midpoint theta.
struct RegionSet {
  std::vector<int> omega_prime;
  std::vector<int> omega_dprime;
  std::vector<int> omega;
  double rho_prime = 0.0;
  double rho_dprime = 0.0;
  double rho_omega = 0.0;
  double t0 = 0.0;
  double t1 = 0.0;
  double theta = 0.0;

  /// 1.0 on omega cells, 0 elsewhere.
  Field omega_mask(const Mesh& mesh) const;
  double omega_area(const Mesh& mesh) const;
};

RegionSet build_regions(const Mesh& mesh, double rho_prime, double rho_dprime,
                        double rho_omega, double t0, double t1);

}  // namespace bulksurf
