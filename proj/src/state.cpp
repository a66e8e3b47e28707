#include "bulksurf/state.hpp"

#include <algorithm>
#include <cmath>

#include "bulksurf/errors.hpp"

namespace bulksurf {

SystemState SystemState::zeros(const Mesh& mesh, double t) {
  SystemState s;
  s.y = Field::Zero(mesh.n_bulk());
  s.z = Field::Zero(mesh.n_bulk());
  s.y_gamma = Field::Zero(mesh.n_surface());
  s.z_gamma = Field::Zero(mesh.n_surface());
  s.t = t;
  return s;
}

bool SystemState::is_finite() const {
  return y.allFinite() && z.allFinite() && y_gamma.allFinite() && z_gamma.allFinite();
}

bool SystemState::matches(const Mesh& mesh) const {
  return y.size() == mesh.n_bulk() && z.size() == mesh.n_bulk() &&
         y_gamma.size() == mesh.n_surface() && z_gamma.size() == mesh.n_surface();
}

double SystemState::min_value() const {
  return std::min({y.minCoeff(), z.minCoeff(), y_gamma.minCoeff(), z_gamma.minCoeff()});
}

double SystemState::max_abs() const {
  return std::max({y.cwiseAbs().maxCoeff(), z.cwiseAbs().maxCoeff(),
                   y_gamma.cwiseAbs().maxCoeff(), z_gamma.cwiseAbs().maxCoeff()});
}

SystemState& SystemState::operator+=(const SystemState& o) {
  y += o.y;
  z += o.z;
  y_gamma += o.y_gamma;
  z_gamma += o.z_gamma;
  return *this;
}

SystemState& SystemState::operator-=(const SystemState& o) {
  y -= o.y;
  z -= o.z;
  y_gamma -= o.y_gamma;
  z_gamma -= o.z_gamma;
  return *this;
}

SystemState& SystemState::operator*=(double s) {
  y *= s;
  z *= s;
  y_gamma *= s;
  z_gamma *= s;
  return *this;
}

SystemState Trajectory::at(double t) const {
  require(!states.empty(), "trajectory is empty");
  const double tol = 1e-9 * std::max(dt, 1.0);
  require(t >= t_begin() - tol && t <= t_end() + tol,
          "time " + std::to_string(t) + " outside trajectory range");
  if (states.size() == 1 || dt <= 0.0) return states.front();
  const double u = (t - t_begin()) / dt;
  auto n = static_cast<std::size_t>(std::clamp(std::floor(u + 1e-9), 0.0,
                                               static_cast<double>(states.size() - 1)));
  const double w = u - static_cast<double>(n);
  if (n + 1 >= states.size() || std::abs(w) < 1e-9) {
    SystemState s = states[n];
    s.t = t;
    return s;
  }
  SystemState s = states[n];
  s *= (1.0 - w);
  SystemState b = states[n + 1];
  b *= w;
  s += b;
  s.t = t;
  return s;
}

}  // namespace bulksurf
