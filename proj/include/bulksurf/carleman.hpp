#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "bulksurf/forward.hpp"
#include "bulksurf/jet.hpp"

namespace bulksurf {

/// Weight parameters on the unit disk with eta0 = 1 - |x|^2.
struct CarlemanConfig {
  double lambda = 2.0;
  double s = 0.0;  // 0 selects default_s1()
  double tau = 0.0;
  double epsilon = 0.5;
  double t0 = 0.0;
  double t1 = 1.0;
  double eta0_sup = 1.0;
  double c_floor = 2.0;  // -d_nu eta0 on the circle
  double C0 = 0.0;       // inf |grad eta0| outside omega'; 2 rho' for this eta0
  double lambda1 = 2.0;

  double theta() const { return 0.5 * (t0 + t1); }
  double gamma(double t) const { return (t - t0) * (t1 - t); }
  double dgamma(double t) const { return t0 + t1 - 2.0 * t; }
  double gamma_max() const { return 0.25 * (t1 - t0) * (t1 - t0); }
  /// 2 gamma_max e^{2 lambda1}.
  double default_s1() const;
  double s_effective() const { return s > 0.0 ? s : default_s1(); }
  /// min over the cylinder of alpha; attained at t = theta, x = 0.
  double alpha_ref() const;
  void validate() const;
};

/// (1 - |x|^2, -2x).
std::pair<double, Point> eta0_and_gradient(const Point& x);

struct WeightValues {
  double gamma = 0.0;
  double alpha = 0.0;
  double xi = 0.0;
  double dalpha_dt = 0.0;
  double dxi_dt = 0.0;
  Point grad_alpha = Point::Zero();
  Point grad_xi = Point::Zero();
};

/// Closed forms; throws ValidationError unless t0 < t < t1.
WeightValues weights(double t, const Point& x, const CarlemanConfig& cfg);

/// exp(-2 s (alpha - alpha_ref)) with exponents below -700 mapped to 0.
double shifted_weight(double s, double alpha, double alpha_ref);

/// alpha, xi and psi-type weights as jets in (t, x1, x2).
struct WeightJets {
  Jet eta0, gamma, alpha, xi;
};
WeightJets weight_jets(const JetPoint& p, const CarlemanConfig& cfg);

struct WeightPropertyReport {
  double sup_dalpha_over_xi2 = 0.0;   // |d_t alpha| / xi^2
  double sup_dxi_over_xi2 = 0.0;      // |d_t xi| / xi^2
  double inf_xi_scaled = 0.0;         // inf xi (t1-t0)^2/4, >= 1
  double sup_b_quotient = 0.0;        // xi / ((t1-t0)^4/16 xi^3), <= 1
  double sup_c_quotient = 0.0;        // |(tau/2 - s alpha) gamma'/gamma| / (s xi^2)
  double sup_d_quotient = 0.0;        // |d_t of the same| / (s xi^3)
  double max_sum_identity_defect = 0.0;   // alpha + xi vs e^{2 lambda}/gamma, relative
  double max_gradient_identity_defect = 0.0;  // closed forms vs jets, relative
  double max_dalpha_fd_defect = 0.0;  // closed form vs central difference, relative
  bool alpha_min_at_theta = true;
  double max_log10_endpoint_weight = 0.0;  // of e^{-2 s alpha} xi^k, k in [-3, 4]
  bool ok = false;
};

/// Samples strictly inside (t0, t1) x closed disk.
WeightPropertyReport weight_property_margins(const CarlemanConfig& cfg,
                                             const std::vector<double>& times,
                                             const std::vector<Point>& points,
                                             double endpoint_dt);

/// a |grad eta0|^2 = 4 a |x|^2.
double sigma(const Point& x, double a);

struct SigmaReport {
  double min_lower_margin = 0.0;  // sigma - beta |grad eta0|^2
  double min_upper_margin = 0.0;  // C1 - sigma with C1 = 4 sup a
  bool ok = false;
};
SigmaReport sigma_bounds(const Mesh& mesh, const Field& a, double beta);

using AnalyticField = std::function<Jet(const JetPoint&)>;

/// Quantities entering the weighted norms, sampled on a space-time grid.
/// Bulk values sit at cell centers, surface values at boundary nodes;
/// gradients have their own quadrature points.
struct SampledField {
  std::vector<double> times;
  double dt = 0.0;

  std::vector<Point> cell_x;
  Field cell_w;
  Field omega;  // 1 on observation cells
  Eigen::MatrixXd z, zt, div;  // rows: time, cols: cell

  std::vector<Point> grad_x;
  Field grad_w;
  Eigen::MatrixXd grad_sq;

  std::vector<Point> surf_x;
  Field surf_w;
  Eigen::MatrixXd zg, zgt, divg, conormal;

  std::vector<Point> sgrad_x;
  Field sgrad_w;
  Eigen::MatrixXd sgrad_sq;

  /// z_t - div(A grad z) and its surface counterpart.
  Eigen::MatrixXd L() const { return zt - div; }
  Eigen::MatrixXd L_gamma() const { return zgt - divg + conormal; }
};

/// Interior nodes t0 + k (t1 - t0)/n, k = 1..n-1; n even so theta is a node.
std::vector<double> interior_times(double t0, double t1, int n);

/// Exact derivatives of a closed-form field on the mesh.
SampledField sample_analytic(const Mesh& mesh, const RegionSet& regions, const AnalyticField& z,
                             const AnalyticField& a, const AnalyticField& d,
                             const std::vector<double>& times);

/// Discrete derivatives of species 0 (y) or 1 (z) of a trajectory: centered
/// time differences, the assembled operators, flux-consistent face gradients.
SampledField sample_discrete(const Mesh& mesh, const RegionSet& regions, const Trajectory& traj,
                             int species, const ImexStepper& ops);

struct WeightedNorms {
  double omega_time = 0, omega_elliptic = 0, omega_gradient = 0, omega_zeroth = 0;
  double gamma_time = 0, gamma_elliptic = 0, gamma_gradient = 0, gamma_zeroth = 0,
         gamma_conormal = 0;
  double I_omega = 0.0;
  double I_gamma = 0.0;
  /// True values are the reported ones times exp(log_scale).
  double log_scale = 0.0;
};

WeightedNorms weighted_norms(double tau, const SampledField& f, const CarlemanConfig& cfg);

struct RatioResult {
  double lhs = 0.0;
  double rhs = 0.0;
  double ratio = 0.0;
  bool indeterminate = false;  // lhs = rhs = 0
  double log_scale = 0.0;
  double s = 0.0;
  double lambda = 0.0;
  double tau = 0.0;
  std::vector<std::pair<std::string, double>> terms;
};

/// lhs = I_Omega + I_Gamma; rhs = observation + L z + L_Gamma terms.
RatioResult carleman_ratio(double tau, const SampledField& z, const CarlemanConfig& cfg);

/// The shifted two-component estimate with sources recovered as residuals
/// f1 = L y - p11 y - p12 z etc. Throws ValidationError when p0 <= 0 or
/// p21, q21 fall below p0.
RatioResult shifted_ratio(const SampledField& y, const SampledField& z, const PotentialSet& pot,
                          const CarlemanConfig& cfg);

/// Components of M1 psi + M2 psi = f~ and N1 psi + N2 psi = g for
/// psi = e^{-s alpha} xi^{tau/2} z. Every sample is multiplied by the
/// constant e^{s alpha} of its own (t, x), which leaves each pointwise
/// identity intact and keeps it out of underflow.
struct Decomposition {
  Eigen::MatrixXd M11, M12, M21, M22, M23, f, f_tilde;  // rows: time, cols: cell
  Eigen::MatrixXd N11, N12, N21, N22, N23, g;           // rows: time, cols: node
  double residual_M = 0.0;  // relative, quadrature-weighted
  double residual_N = 0.0;
};

Decomposition mn_decomposition(double tau, const Mesh& mesh, const AnalyticField& z,
                               const AnalyticField& a, const AnalyticField& d,
                               const CarlemanConfig& cfg, const std::vector<double>& times);

/// Five closed forms, all nonzero at (theta, 0).
std::vector<std::pair<std::string, AnalyticField>> analytic_test_family(double t0, double t1);

struct SweepRow {
  std::string field;
  std::string estimate;  // "carleman" or "shifted"
  RatioResult result;
};

/// tau,s,lambda,field,estimate,lhs,rhs,ratio,log_scale,<term columns>
void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows);

/// max ratio over the s sweep / ratio at the first s, per (field, lambda, tau).
struct GrowthSummary {
  std::string field;
  std::string estimate;
  double lambda = 0.0;
  double tau = 0.0;
  double growth = 0.0;
};
std::vector<GrowthSummary> ratio_growth(const std::vector<SweepRow>& rows);

}  // namespace bulksurf
