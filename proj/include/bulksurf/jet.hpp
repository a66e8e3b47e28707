#pragma once

#include <cmath>

#include <Eigen/Core>

namespace bulksurf {

/// Second-order forward-mode jet in the variables (t, x1, x2).
/// Index 0 is time, 1 and 2 are space.
struct Jet {
  double v = 0.0;
  Eigen::Vector3d g = Eigen::Vector3d::Zero();
  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();

  Jet() = default;
  Jet(double value) : v(value) {}  // NOLINT: constants promote implicitly

  static Jet variable(double value, int index) {
    Jet j(value);
    j.g[index] = 1.0;
    return j;
  }

  double dt() const { return g[0]; }
  Eigen::Vector2d grad() const { return g.tail<2>(); }
  Eigen::Matrix2d hess() const { return h.bottomRightCorner<2, 2>(); }
  double laplacian() const { return h(1, 1) + h(2, 2); }
};

/// (t, x1, x2) seeded as independent variables.
struct JetPoint {
  Jet t, x1, x2;
  JetPoint(double tv, double x1v, double x2v)
      : t(Jet::variable(tv, 0)), x1(Jet::variable(x1v, 1)), x2(Jet::variable(x2v, 2)) {}
};

namespace jet_detail {
// phi(u) with phi' = d1, phi'' = d2 at u.v
inline Jet chain(const Jet& u, double v, double d1, double d2) {
  Jet r(v);
  r.g = d1 * u.g;
  r.h = d1 * u.h + d2 * u.g * u.g.transpose();
  return r;
}
}  // namespace jet_detail

inline Jet operator+(const Jet& a, const Jet& b) {
  Jet r(a.v + b.v);
  r.g = a.g + b.g;
  r.h = a.h + b.h;
  return r;
}
inline Jet operator-(const Jet& a, const Jet& b) {
  Jet r(a.v - b.v);
  r.g = a.g - b.g;
  r.h = a.h - b.h;
  return r;
}
inline Jet operator-(const Jet& a) {
  Jet r(-a.v);
  r.g = -a.g;
  r.h = -a.h;
  return r;
}
inline Jet operator*(const Jet& a, const Jet& b) {
  Jet r(a.v * b.v);
  r.g = a.v * b.g + b.v * a.g;
  r.h = a.v * b.h + b.v * a.h + a.g * b.g.transpose() + b.g * a.g.transpose();
  return r;
}
inline Jet operator/(const Jet& a, const Jet& b) {
  const double inv = 1.0 / b.v;
  return a * jet_detail::chain(b, inv, -inv * inv, 2.0 * inv * inv * inv);
}
inline Jet& operator+=(Jet& a, const Jet& b) { return a = a + b; }
inline Jet& operator-=(Jet& a, const Jet& b) { return a = a - b; }
inline Jet& operator*=(Jet& a, const Jet& b) { return a = a * b; }

inline Jet exp(const Jet& u) {
  const double e = std::exp(u.v);
  return jet_detail::chain(u, e, e, e);
}
inline Jet log(const Jet& u) {
  return jet_detail::chain(u, std::log(u.v), 1.0 / u.v, -1.0 / (u.v * u.v));
}
inline Jet sin(const Jet& u) {
  const double s = std::sin(u.v), c = std::cos(u.v);
  return jet_detail::chain(u, s, c, -s);
}
inline Jet cos(const Jet& u) {
  const double s = std::sin(u.v), c = std::cos(u.v);
  return jet_detail::chain(u, c, -s, -c);
}
inline Jet pow(const Jet& u, double p) {
  if (p == 0.0) return Jet(1.0);
  const double a = std::pow(u.v, p);
  return jet_detail::chain(u, a, p * std::pow(u.v, p - 1.0), p * (p - 1.0) * std::pow(u.v, p - 2.0));
}
inline Jet sqrt(const Jet& u) { return pow(u, 0.5); }

/// div(a grad u) for isotropic a(x).
inline double jet_divergence(const Jet& a, const Jet& u) {
  return a.grad().dot(u.grad()) + a.v * u.laplacian();
}

/// div_G(d grad_G u) on the circle of radius R at the point R nu.
inline double jet_surface_divergence(const Jet& d, const Jet& u, const Eigen::Vector2d& nu,
                                     double R) {
  const Eigen::Vector2d tau(-nu[1], nu[0]);
  const double u_ss = tau.dot(u.hess() * tau) - u.grad().dot(nu) / R;
  return d.grad().dot(tau) * u.grad().dot(tau) + d.v * u_ss;
}

}  // namespace bulksurf
