#include "bulksurf/carleman.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <ostream>

#include "bulksurf/errors.hpp"

namespace bulksurf {

namespace {

constexpr double kExpFloor = -700.0;

double clamp_exp(double e) { return e < kExpFloor ? 0.0 : std::exp(e); }

// Shifted weight W = exp(-2 s (alpha - alpha_ref)) and s xi on a space-time grid.
struct WeightTable {
  Eigen::MatrixXd w, sxi;
};

WeightTable weight_table(const std::vector<double>& times, const std::vector<Point>& pts,
                         const CarlemanConfig& cfg) {
  const double s = cfg.s_effective();
  const double aref = cfg.alpha_ref();
  WeightTable tab;
  tab.w.resize(times.size(), pts.size());
  tab.sxi.resize(times.size(), pts.size());
  for (std::size_t i = 0; i < times.size(); ++i)
    for (std::size_t k = 0; k < pts.size(); ++k) {
      const WeightValues wv = weights(times[i], pts[k], cfg);
      tab.w(i, k) = shifted_weight(s, wv.alpha, aref);
      tab.sxi(i, k) = s * wv.xi;
    }
  return tab;
}

// sum_i dt sum_k qw_k W (s xi)^p val^2, with an optional cell mask.
double weighted_sum(const WeightTable& tab, double dt, const Field& qw, double p,
                    const Eigen::MatrixXd& val, const Field* mask = nullptr) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < val.rows(); ++i)
    for (Eigen::Index k = 0; k < val.cols(); ++k) {
      const double w = tab.w(i, k);
      if (w == 0.0 || (mask && (*mask)[k] == 0.0)) continue;
      acc += dt * qw[k] * w * std::pow(tab.sxi(i, k), p) * val(i, k) * val(i, k);
    }
  return acc;
}

struct NormTables {
  WeightTable cells, grads, surf, sgrads;
};

NormTables norm_tables(const SampledField& f, const CarlemanConfig& cfg) {
  return {weight_table(f.times, f.cell_x, cfg), weight_table(f.times, f.grad_x, cfg),
          weight_table(f.times, f.surf_x, cfg), weight_table(f.times, f.sgrad_x, cfg)};
}

WeightedNorms norms_from_tables(double tau, const SampledField& f, const CarlemanConfig& cfg,
                                const NormTables& t) {
  const double lam = cfg.lambda;
  WeightedNorms n;
  n.omega_time = weighted_sum(t.cells, f.dt, f.cell_w, tau - 1, f.zt);
  n.omega_elliptic = weighted_sum(t.cells, f.dt, f.cell_w, tau - 1, f.div);
  n.omega_gradient = lam * lam * weighted_sum(t.grads, f.dt, f.grad_w, tau + 1, f.grad_sq.cwiseSqrt());
  n.omega_zeroth = std::pow(lam, 4) * weighted_sum(t.cells, f.dt, f.cell_w, tau + 3, f.z);
  n.gamma_time = weighted_sum(t.surf, f.dt, f.surf_w, tau - 1, f.zgt);
  n.gamma_elliptic = weighted_sum(t.surf, f.dt, f.surf_w, tau - 1, f.divg);
  n.gamma_gradient = lam * weighted_sum(t.sgrads, f.dt, f.sgrad_w, tau + 1, f.sgrad_sq.cwiseSqrt());
  n.gamma_zeroth = std::pow(lam, 3) * weighted_sum(t.surf, f.dt, f.surf_w, tau + 3, f.zg);
  n.gamma_conormal = lam * weighted_sum(t.surf, f.dt, f.surf_w, tau + 1, f.conormal);
  n.I_omega = n.omega_time + n.omega_elliptic + n.omega_gradient + n.omega_zeroth;
  n.I_gamma = n.gamma_time + n.gamma_elliptic + n.gamma_gradient + n.gamma_zeroth + n.gamma_conormal;
  n.log_scale = -2.0 * cfg.s_effective() * cfg.alpha_ref();
  return n;
}

double weighted_l2(const Eigen::MatrixXd& m, const Field& w) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    acc += (m.row(i).transpose().array().square() * w.array()).sum();
  return std::sqrt(acc);
}

}  // namespace

// ---------------------------------------------------------------------------

double CarlemanConfig::default_s1() const {
  return 2.0 * gamma_max() * std::exp(2.0 * lambda1 * eta0_sup);
}

double CarlemanConfig::alpha_ref() const {
  return (std::exp(2.0 * lambda * eta0_sup) - std::exp(lambda * eta0_sup)) / gamma_max();
}

void CarlemanConfig::validate() const {
  require(lambda >= 1.0, "carleman.lambda must be >= 1");
  require(lambda1 >= 1.0, "carleman.lambda1 must be >= 1");
  require(s == 0.0 || s >= 1.0, "carleman.s must be >= 1 (or 0 for the default s1)");
  require(epsilon > 0.0 && epsilon < 1.0, "carleman.epsilon must lie in (0, 1)");
  require(t0 < t1, "carleman window needs t0 < t1");
  require(eta0_sup == 1.0, "carleman weights are built for the unit disk (eta0_sup = 1)");
}

std::pair<double, Point> eta0_and_gradient(const Point& x) {
  return {1.0 - x.squaredNorm(), -2.0 * x};
}

WeightValues weights(double t, const Point& x, const CarlemanConfig& cfg) {
  require(t > cfg.t0 && t < cfg.t1, "weights: t = " + std::to_string(t) +
                                        " outside the open window (t0, t1)");
  const auto [eta, grad_eta] = eta0_and_gradient(x);
  WeightValues w;
  w.gamma = cfg.gamma(t);
  const double dlog = cfg.dgamma(t) / w.gamma;
  const double e = std::exp(cfg.lambda * eta);
  w.alpha = (std::exp(2.0 * cfg.lambda * cfg.eta0_sup) - e) / w.gamma;
  w.xi = e / w.gamma;
  w.dalpha_dt = -w.alpha * dlog;
  w.dxi_dt = -w.xi * dlog;
  w.grad_xi = cfg.lambda * w.xi * grad_eta;
  w.grad_alpha = -w.grad_xi;
  return w;
}

double shifted_weight(double s, double alpha, double alpha_ref) {
  return clamp_exp(-2.0 * s * (alpha - alpha_ref));
}

WeightJets weight_jets(const JetPoint& p, const CarlemanConfig& cfg) {
  WeightJets w;
  w.eta0 = Jet(1.0) - p.x1 * p.x1 - p.x2 * p.x2;
  w.gamma = (p.t - Jet(cfg.t0)) * (Jet(cfg.t1) - p.t);
  const Jet e = exp(cfg.lambda * w.eta0);
  w.alpha = (Jet(std::exp(2.0 * cfg.lambda * cfg.eta0_sup)) - e) / w.gamma;
  w.xi = e / w.gamma;
  return w;
}

WeightPropertyReport weight_property_margins(const CarlemanConfig& cfg,
                                             const std::vector<double>& times,
                                             const std::vector<Point>& points,
                                             double endpoint_dt) {
  cfg.validate();
  const double s = cfg.s_effective();
  const double tau = cfg.tau;
  const double L = cfg.t1 - cfg.t0;
  const double e2 = std::exp(2.0 * cfg.lambda * cfg.eta0_sup);
  WeightPropertyReport r;
  r.inf_xi_scaled = std::numeric_limits<double>::infinity();

  for (double t : times) {
    const double g = cfg.gamma(t), dg = cfg.dgamma(t);
    for (const Point& x : points) {
      const WeightValues w = weights(t, x, cfg);
      r.sup_dalpha_over_xi2 = std::max(r.sup_dalpha_over_xi2, std::abs(w.dalpha_dt) / (w.xi * w.xi));
      r.sup_dxi_over_xi2 = std::max(r.sup_dxi_over_xi2, std::abs(w.dxi_dt) / (w.xi * w.xi));
      r.inf_xi_scaled = std::min(r.inf_xi_scaled, w.xi * L * L / 4.0);
      r.sup_b_quotient = std::max(r.sup_b_quotient, w.xi / (std::pow(L, 4) / 16.0 * std::pow(w.xi, 3)));
      const double h = (0.5 * tau - s * w.alpha) * dg / g;
      const double dh = -s * w.dalpha_dt * dg / g + (0.5 * tau - s * w.alpha) * (-2.0 * g - dg * dg) / (g * g);
      r.sup_c_quotient = std::max(r.sup_c_quotient, std::abs(h) / (s * w.xi * w.xi));
      r.sup_d_quotient = std::max(r.sup_d_quotient, std::abs(dh) / (s * std::pow(w.xi, 3)));

      const double sum_ref = e2 / g;
      r.max_sum_identity_defect =
          std::max(r.max_sum_identity_defect, std::abs(w.alpha + w.xi - sum_ref) / sum_ref);

      const WeightJets j = weight_jets(JetPoint(t, x[0], x[1]), cfg);
      const double gscale = w.grad_xi.norm() + std::numeric_limits<double>::min();
      const double tscale = std::abs(w.dalpha_dt) + std::abs(w.dxi_dt) + 1e-300;
      r.max_gradient_identity_defect = std::max(
          {r.max_gradient_identity_defect, (j.alpha.grad() - w.grad_alpha).norm() / gscale,
           (j.xi.grad() - w.grad_xi).norm() / gscale,
           (w.grad_alpha + w.grad_xi).norm() / gscale,
           std::abs(j.alpha.dt() - w.dalpha_dt) / tscale,
           std::abs(j.xi.dt() - w.dxi_dt) / tscale});

      const double hfd = 1e-6 * L;
      if (t - hfd > cfg.t0 && t + hfd < cfg.t1) {
        const double fd = (weights(t + hfd, x, cfg).alpha - weights(t - hfd, x, cfg).alpha) / (2 * hfd);
        r.max_dalpha_fd_defect = std::max(
            r.max_dalpha_fd_defect, std::abs(fd - w.dalpha_dt) / (std::abs(w.dalpha_dt) + w.alpha * 1e-3 / L));
      }
      if (w.alpha < weights(cfg.theta(), x, cfg).alpha * (1.0 - 1e-14)) r.alpha_min_at_theta = false;
    }
  }

  r.max_log10_endpoint_weight = -std::numeric_limits<double>::infinity();
  for (double t : {cfg.t0 + endpoint_dt, cfg.t1 - endpoint_dt})
    for (const Point& x : points) {
      const WeightValues w = weights(t, x, cfg);
      for (int k = -3; k <= 4; ++k) {
        const double lg = (-2.0 * s * w.alpha + k * std::log(w.xi)) / std::log(10.0);
        r.max_log10_endpoint_weight = std::max(r.max_log10_endpoint_weight, lg);
      }
    }

  const bool finite = std::isfinite(r.sup_dalpha_over_xi2) && std::isfinite(r.sup_dxi_over_xi2) &&
                      std::isfinite(r.inf_xi_scaled) && std::isfinite(r.sup_b_quotient) &&
                      std::isfinite(r.sup_c_quotient) && std::isfinite(r.sup_d_quotient);
  r.ok = finite && r.inf_xi_scaled >= 1.0 - 1e-12 && r.sup_b_quotient <= 1.0 + 1e-12 &&
         r.max_sum_identity_defect <= 1e-12 && r.max_gradient_identity_defect <= 1e-10 &&
         r.max_dalpha_fd_defect <= 1e-6 && r.alpha_min_at_theta &&
         r.max_log10_endpoint_weight < -300.0;
  return r;
}

double sigma(const Point& x, double a) { return a * eta0_and_gradient(x).second.squaredNorm(); }

SigmaReport sigma_bounds(const Mesh& mesh, const Field& a, double beta) {
  SigmaReport r;
  r.min_lower_margin = r.min_upper_margin = std::numeric_limits<double>::infinity();
  const double C1 = 4.0 * a.maxCoeff();
  auto probe = [&](const Point& x, double av) {
    const double sg = sigma(x, av);
    const double g2 = eta0_and_gradient(x).second.squaredNorm();
    r.min_lower_margin = std::min(r.min_lower_margin, sg - beta * g2);
    r.min_upper_margin = std::min(r.min_upper_margin, C1 - sg);
  };
  for (int c = 0; c < mesh.n_bulk(); ++c) probe(mesh.cell_center(c), a[c]);
  for (int j = 0; j < mesh.n_surface(); ++j) probe(mesh.surface_point(j), a[mesh.trace_map[j]]);
  r.ok = r.min_lower_margin >= -1e-12 && r.min_upper_margin >= -1e-12;
  return r;
}

// ---------------------------------------------------------------------------

std::vector<double> interior_times(double t0, double t1, int n) {
  require(n >= 2 && n % 2 == 0, "time quadrature needs an even node count >= 2");
  std::vector<double> t;
  for (int k = 1; k < n; ++k) t.push_back(t0 + (t1 - t0) * k / n);
  return t;
}

namespace {

void fill_geometry(SampledField& f, const Mesh& mesh, const RegionSet& regions) {
  f.cell_x.resize(mesh.n_bulk());
  for (int c = 0; c < mesh.n_bulk(); ++c) f.cell_x[c] = mesh.cell_center(c);
  f.cell_w = mesh.cell_areas;
  f.omega = regions.omega_mask(mesh);
  f.surf_x.resize(mesh.n_surface());
  for (int j = 0; j < mesh.n_surface(); ++j) f.surf_x[j] = mesh.surface_point(j);
  f.surf_w = mesh.surface_weights;
}

void resize_values(SampledField& f) {
  const auto nt = static_cast<Eigen::Index>(f.times.size());
  const auto nc = static_cast<Eigen::Index>(f.cell_x.size());
  const auto ns = static_cast<Eigen::Index>(f.surf_x.size());
  f.z.resize(nt, nc); f.zt.resize(nt, nc); f.div.resize(nt, nc);
  f.zg.resize(nt, ns); f.zgt.resize(nt, ns); f.divg.resize(nt, ns); f.conormal.resize(nt, ns);
  f.grad_sq.resize(nt, static_cast<Eigen::Index>(f.grad_x.size()));
  f.sgrad_sq.resize(nt, static_cast<Eigen::Index>(f.sgrad_x.size()));
}

}  // namespace

SampledField sample_analytic(const Mesh& mesh, const RegionSet& regions, const AnalyticField& z,
                             const AnalyticField& a, const AnalyticField& d,
                             const std::vector<double>& times) {
  require(times.size() >= 2, "sample_analytic needs at least two times");
  SampledField f;
  f.times = times;
  f.dt = times[1] - times[0];
  fill_geometry(f, mesh, regions);
  f.grad_x = f.cell_x;
  f.grad_w = f.cell_w;
  f.sgrad_x = f.surf_x;
  f.sgrad_w = f.surf_w;
  resize_values(f);
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double t = times[i];
    for (std::size_t c = 0; c < f.cell_x.size(); ++c) {
      const JetPoint p(t, f.cell_x[c][0], f.cell_x[c][1]);
      const Jet zj = z(p), aj = a(p);
      f.z(i, c) = zj.v;
      f.zt(i, c) = zj.dt();
      f.div(i, c) = jet_divergence(aj, zj);
      f.grad_sq(i, c) = zj.grad().squaredNorm();
    }
    for (std::size_t j = 0; j < f.surf_x.size(); ++j) {
      const JetPoint p(t, f.surf_x[j][0], f.surf_x[j][1]);
      const Point nu = mesh.outward_normal[j];
      const Jet zj = z(p), aj = a(p), dj = d(p);
      f.zg(i, j) = zj.v;
      f.zgt(i, j) = zj.dt();
      f.divg(i, j) = jet_surface_divergence(dj, zj, nu, mesh.radius);
      f.conormal(i, j) = aj.v * zj.grad().dot(nu);
      const Point tau(-nu[1], nu[0]);
      f.sgrad_sq(i, j) = std::pow(zj.grad().dot(tau), 2);
    }
  }
  return f;
}

SampledField sample_discrete(const Mesh& mesh, const RegionSet& regions, const Trajectory& traj,
                             int species, const ImexStepper& ops) {
  require(species == 0 || species == 1, "species must be 0 (y) or 1 (z)");
  const double eps = 1e-9 * traj.dt;
  std::vector<int> nodes;
  for (std::size_t n = 1; n + 1 < traj.size(); ++n)
    if (traj.time(n) > regions.t0 + eps && traj.time(n) < regions.t1 - eps)
      nodes.push_back(static_cast<int>(n));
  require(nodes.size() >= 2, "sample_discrete: trajectory does not cover (t0, t1)");

  SampledField f;
  for (int n : nodes) f.times.push_back(traj.time(n));
  f.dt = traj.dt;
  fill_geometry(f, mesh, regions);
  for (const InteriorFace& face : mesh.faces) {
    f.grad_x.push_back(face.midpoint);
  }
  const double h = mesh.boundary_face_distance();
  for (int j = 0; j < mesh.n_surface(); ++j)
    f.grad_x.push_back((mesh.radius - 0.5 * h) * mesh.outward_normal[j]);
  f.grad_w.resize(f.grad_x.size());
  for (std::size_t k = 0; k < mesh.faces.size(); ++k)
    f.grad_w[k] = mesh.faces[k].length * mesh.faces[k].distance;
  for (int j = 0; j < mesh.n_surface(); ++j)
    f.grad_w[mesh.faces.size() + j] = mesh.surface_weights[j] * h;
  const int ns = mesh.n_surface();
  for (int j = 0; j < ns; ++j) {
    const double th = (j + 0.5) * mesh.dtheta;
    f.sgrad_x.push_back(mesh.radius * Point(std::cos(th), std::sin(th)));
  }
  f.sgrad_w = mesh.surface_weights;
  resize_values(f);

  const SparseOp& bop = ops.bulk_operator(species);
  const SparseOp& sop = ops.surface_operator(species);
  auto bulk = [&](const SystemState& s) -> const Field& { return species == 0 ? s.y : s.z; };
  auto surf = [&](const SystemState& s) -> const Field& {
    return species == 0 ? s.y_gamma : s.z_gamma;
  };
  const int nb = mesh.n_bulk();
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const int n = nodes[i];
    const Field& u = bulk(traj.states[n]);
    const Field& ug = surf(traj.states[n]);
    Field full(nb + ns);
    full << u, ug;
    const Field lu = bop.apply(full);
    f.z.row(i) = u.transpose();
    f.zt.row(i) = ((bulk(traj.states[n + 1]) - bulk(traj.states[n - 1])) / (2 * traj.dt)).transpose();
    f.div.row(i) = lu.head(nb).transpose();
    f.zg.row(i) = ug.transpose();
    f.zgt.row(i) = ((surf(traj.states[n + 1]) - surf(traj.states[n - 1])) / (2 * traj.dt)).transpose();
    f.divg.row(i) = sop.apply(ug).transpose();
    // The surface rows of the bulk operator carry minus the conormal flux.
    f.conormal.row(i) = -lu.tail(ns).transpose();
    for (std::size_t k = 0; k < mesh.faces.size(); ++k) {
      const InteriorFace& face = mesh.faces[k];
      f.grad_sq(i, k) = std::pow((u[face.right] - u[face.left]) / face.distance, 2);
    }
    for (int j = 0; j < ns; ++j) {
      f.grad_sq(i, mesh.faces.size() + j) = std::pow((ug[j] - u[mesh.trace_map[j]]) / h, 2);
      const int jn = (j + 1) % ns;
      f.sgrad_sq(i, j) = std::pow((ug[jn] - ug[j]) / mesh.surface_weights[j], 2);
    }
  }
  return f;
}

WeightedNorms weighted_norms(double tau, const SampledField& f, const CarlemanConfig& cfg) {
  cfg.validate();
  for (double t : f.times)
    require(t > cfg.t0 && t < cfg.t1, "weighted_norms: sample time outside (t0, t1)");
  return norms_from_tables(tau, f, cfg, norm_tables(f, cfg));
}

namespace {

RatioResult finish(RatioResult r) {
  if (r.rhs > 0.0) {
    r.ratio = r.lhs / r.rhs;
  } else if (r.lhs > 0.0) {
    r.ratio = std::numeric_limits<double>::infinity();
  } else {
    r.indeterminate = true;
    r.ratio = std::numeric_limits<double>::quiet_NaN();
  }
  return r;
}

}  // namespace

RatioResult carleman_ratio(double tau, const SampledField& z, const CarlemanConfig& cfg) {
  cfg.validate();
  const NormTables t = norm_tables(z, cfg);
  const WeightedNorms n = norms_from_tables(tau, z, cfg, t);
  const double lam = cfg.lambda;
  const double obs = std::pow(lam, 4) * weighted_sum(t.cells, z.dt, z.cell_w, tau + 3, z.z, &z.omega);
  const double lz = weighted_sum(t.cells, z.dt, z.cell_w, tau, z.L());
  const double lg = weighted_sum(t.surf, z.dt, z.surf_w, tau, z.L_gamma());
  RatioResult r;
  r.s = cfg.s_effective();
  r.lambda = lam;
  r.tau = tau;
  r.log_scale = n.log_scale;
  r.lhs = n.I_omega + n.I_gamma;
  r.rhs = obs + lz + lg;
  r.terms = {{"omega_time", n.omega_time},       {"omega_elliptic", n.omega_elliptic},
             {"omega_gradient", n.omega_gradient}, {"omega_zeroth", n.omega_zeroth},
             {"gamma_time", n.gamma_time},       {"gamma_elliptic", n.gamma_elliptic},
             {"gamma_gradient", n.gamma_gradient}, {"gamma_zeroth", n.gamma_zeroth},
             {"gamma_conormal", n.gamma_conormal}, {"rhs_observation", obs},
             {"rhs_L", lz},                      {"rhs_L_gamma", lg}};
  return finish(r);
}

RatioResult shifted_ratio(const SampledField& y, const SampledField& z, const PotentialSet& pot,
                          const CarlemanConfig& cfg) {
  cfg.validate();
  require(pot.p0 > 0.0, "shifted estimate needs p0 > 0");
  require(pot.p21.minCoeff() >= pot.p0, "p21 below p0 floor: Assumption I");
  require(pot.q21.minCoeff() >= pot.p0, "q21 below p0 floor: Assumption I");
  require(y.times == z.times && y.cell_x.size() == z.cell_x.size(),
          "shifted estimate: y and z samples differ");
  require(static_cast<Eigen::Index>(y.cell_x.size()) == pot.p21.size() &&
              static_cast<Eigen::Index>(y.surf_x.size()) == pot.q21.size(),
          "shifted estimate: potentials do not match the sample grid");

  const NormTables ty = norm_tables(y, cfg);
  const NormTables tz = norm_tables(z, cfg);
  const WeightedNorms ny = norms_from_tables(-3.0, y, cfg, ty);
  const WeightedNorms nz = norms_from_tables(0.0, z, cfg, tz);

  auto row_scale = [](const Eigen::MatrixXd& m, const Field& p) {
    return Eigen::MatrixXd(m * p.asDiagonal());
  };
  const Eigen::MatrixXd f1 = y.L() - row_scale(y.z, pot.p11) - row_scale(z.z, pot.p12);
  const Eigen::MatrixXd f2 = z.L() - row_scale(y.z, pot.p21) - row_scale(z.z, pot.p22);
  const Eigen::MatrixXd g1 = y.L_gamma() - row_scale(y.zg, pot.q11) - row_scale(z.zg, pot.q12);
  const Eigen::MatrixXd g2 = z.L_gamma() - row_scale(y.zg, pot.q21) - row_scale(z.zg, pot.q22);

  const double s = cfg.s_effective(), lam = cfg.lambda, eps = cfg.epsilon;
  // Powers of xi are powers of s xi divided by powers of s.
  const double obs = std::pow(s, 4) * std::pow(lam, 4 + eps) *
                     weighted_sum(tz.cells, z.dt, z.cell_w, 4, z.z, &z.omega) / std::pow(s, 4);
  const double src1 = std::pow(s, -3) * std::pow(lam, -4 + eps) * std::pow(s, 3) *
                      (weighted_sum(ty.cells, y.dt, y.cell_w, -3, f1) +
                       weighted_sum(ty.surf, y.dt, y.surf_w, -3, g1));
  const double src2 = std::pow(lam, 2 * eps) * (weighted_sum(tz.cells, z.dt, z.cell_w, 0, f2) +
                                                 weighted_sum(tz.surf, z.dt, z.surf_w, 0, g2));
  RatioResult r;
  r.s = s;
  r.lambda = lam;
  r.tau = 0.0;
  r.log_scale = ny.log_scale;
  const double ly = std::pow(lam, -4 + eps) * (ny.I_omega + ny.I_gamma);
  r.lhs = ly + nz.I_omega + nz.I_gamma;
  r.rhs = obs + src1 + src2;
  r.terms = {{"lhs_y", ly}, {"lhs_z", nz.I_omega + nz.I_gamma}, {"rhs_observation", obs},
             {"rhs_f1_g1", src1}, {"rhs_f2_g2", src2}};
  return finish(r);
}

// ---------------------------------------------------------------------------

Decomposition mn_decomposition(double tau, const Mesh& mesh, const AnalyticField& z,
                               const AnalyticField& a, const AnalyticField& d,
                               const CarlemanConfig& cfg, const std::vector<double>& times) {
  cfg.validate();
  const double s = cfg.s_effective(), lam = cfg.lambda;
  const auto nt = static_cast<Eigen::Index>(times.size());
  const int nc = mesh.n_bulk(), ns = mesh.n_surface();
  Decomposition D;
  for (auto* m : {&D.M11, &D.M12, &D.M21, &D.M22, &D.M23, &D.f, &D.f_tilde}) m->resize(nt, nc);
  for (auto* m : {&D.N11, &D.N12, &D.N21, &D.N22, &D.N23, &D.g}) m->resize(nt, ns);

  // psi and the plain weight factor, both carrying e^{s alpha(t, x)} of the
  // evaluation point itself: a constant per point, so each pointwise
  // identity is checked at unit scale instead of underflowing.
  auto build = [&](const JetPoint& p, WeightJets& w, Jet& psi, double& factor) {
    w = weight_jets(p, cfg);
    const Jet e = exp(-s * (w.alpha - Jet(w.alpha.v)));
    const Jet xp = pow(w.xi, 0.5 * tau);
    psi = e * xp * z(p);
    factor = e.v * xp.v;
  };

  for (Eigen::Index i = 0; i < nt; ++i) {
    const double t = times[i];
    for (int c = 0; c < nc; ++c) {
      const Point x = mesh.cell_center(c);
      const JetPoint p(t, x[0], x[1]);
      WeightJets w;
      Jet psi;
      double factor = 0.0;
      build(p, w, psi, factor);
      const Jet zj = z(p), aj = a(p);
      const double xi = w.xi.v, k = s * xi + 0.5 * tau;
      const Eigen::Vector2d geta = w.eta0.grad();
      const double sig = aj.v * geta.squaredNorm();
      const double dlog = w.gamma.dt() / w.gamma.v;
      D.M11(i, c) = 2.0 * lam * k * aj.v * geta.dot(psi.grad());
      D.M12(i, c) = psi.dt();
      D.M21(i, c) = -lam * lam * s * s * xi * xi * sig * psi.v;
      D.M22(i, c) = -jet_divergence(aj, psi);
      D.M23(i, c) = (0.5 * tau - s * w.alpha.v) * dlog * psi.v;
      D.f(i, c) = factor * (zj.dt() - jet_divergence(aj, zj));
      const double div_a_eta = jet_divergence(aj, w.eta0);
      D.f_tilde(i, c) = D.f(i, c) - lam * k * div_a_eta * psi.v +
                        (lam * lam * tau * tau / 4.0 - s * lam * lam * xi * (1.0 - tau)) * sig * psi.v;
    }
    for (int j = 0; j < ns; ++j) {
      const Point x = mesh.surface_point(j);
      const Point nu = mesh.outward_normal[j];
      const JetPoint p(t, x[0], x[1]);
      WeightJets w;
      Jet psi;
      double factor = 0.0;
      build(p, w, psi, factor);
      const Jet zj = z(p), aj = a(p), dj = d(p);
      const double k = s * w.xi.v + 0.5 * tau;
      const double dlog = w.gamma.dt() / w.gamma.v;
      const double conormal_eta = aj.v * w.eta0.grad().dot(nu);
      D.N11(i, j) = psi.dt();
      D.N12(i, j) = -lam * k * conormal_eta * psi.v;
      D.N21(i, j) = -jet_surface_divergence(dj, psi, nu, mesh.radius);
      D.N22(i, j) = (0.5 * tau - s * w.alpha.v) * dlog * psi.v;
      D.N23(i, j) = aj.v * psi.grad().dot(nu);
      D.g(i, j) = factor * (zj.dt() - jet_surface_divergence(dj, zj, nu, mesh.radius) +
                            aj.v * zj.grad().dot(nu));
    }
  }

  const double dt = times.size() > 1 ? times[1] - times[0] : 1.0;
  const Field cw = mesh.cell_areas * dt;
  const Field sw = mesh.surface_weights * dt;
  const Eigen::MatrixXd rm = D.M11 + D.M12 + D.M21 + D.M22 + D.M23 - D.f_tilde;
  const Eigen::MatrixXd sm = D.M11.cwiseAbs() + D.M12.cwiseAbs() + D.M21.cwiseAbs() +
                             D.M22.cwiseAbs() + D.M23.cwiseAbs() + D.f_tilde.cwiseAbs();
  const Eigen::MatrixXd rn = D.N11 + D.N12 + D.N21 + D.N22 + D.N23 - D.g;
  const Eigen::MatrixXd sn = D.N11.cwiseAbs() + D.N12.cwiseAbs() + D.N21.cwiseAbs() +
                             D.N22.cwiseAbs() + D.N23.cwiseAbs() + D.g.cwiseAbs();
  const double scm = weighted_l2(sm, cw), scn = weighted_l2(sn, sw);
  D.residual_M = scm > 0.0 ? weighted_l2(rm, cw) / scm : weighted_l2(rm, cw);
  D.residual_N = scn > 0.0 ? weighted_l2(rn, sw) / scn : weighted_l2(rn, sw);
  return D;
}

std::vector<std::pair<std::string, AnalyticField>> analytic_test_family(double t0, double t1) {
  const double pi = std::numbers::pi;
  std::vector<std::pair<std::string, AnalyticField>> fam;
  fam.emplace_back("bump", [=](const JetPoint& p) {
    const Jet th = (p.t - Jet(t0)) / Jet(t1 - t0);
    return sin(pi * th) * (Jet(1.0) - p.x1 * p.x1 - p.x2 * p.x2);
  });
  fam.emplace_back("affine", [](const JetPoint& p) { return (Jet(1.0) + p.t) * (Jet(1.0) + p.x1); });
  fam.emplace_back("saddle", [](const JetPoint& p) {
    return exp(-p.t) * (Jet(1.0) + 0.5 * (p.x1 * p.x1 - p.x2 * p.x2));
  });
  fam.emplace_back("gaussian", [=](const JetPoint& p) {
    const Jet dx = p.x1 - Jet(0.3);
    return (Jet(2.0) + cos(pi * p.t)) * exp(-(dx * dx + p.x2 * p.x2));
  });
  fam.emplace_back("ramp", [](const JetPoint& p) {
    return p.t * p.t * (p.x1 + 2.0 * p.x2) + Jet(1.0);
  });
  return fam;
}

void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  std::vector<std::string> names;
  for (const SweepRow& r : rows)
    for (const auto& [name, v] : r.result.terms)
      if (std::find(names.begin(), names.end(), name) == names.end()) names.push_back(name);
  os << "tau,s,lambda,field,estimate,lhs,rhs,ratio,log_scale";
  for (const auto& n : names) os << ',' << n;
  os << '\n';
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (const SweepRow& r : rows) {
    const RatioResult& q = r.result;
    os << num(q.tau) << ',' << num(q.s) << ',' << num(q.lambda) << ',' << r.field << ','
       << r.estimate << ',' << num(q.lhs) << ',' << num(q.rhs) << ',' << num(q.ratio) << ','
       << num(q.log_scale);
    for (const auto& n : names) {
      auto it = std::find_if(q.terms.begin(), q.terms.end(),
                             [&](const auto& p) { return p.first == n; });
      os << ',' << (it == q.terms.end() ? std::string() : num(it->second));
    }
    os << '\n';
  }
}

std::vector<GrowthSummary> ratio_growth(const std::vector<SweepRow>& rows) {
  std::vector<GrowthSummary> out;
  std::map<std::tuple<std::string, std::string, double, double>, std::size_t> index;
  std::vector<double> first;
  for (const SweepRow& r : rows) {
    const auto key = std::make_tuple(r.field, r.estimate, r.result.lambda, r.result.tau);
    auto it = index.find(key);
    if (it == index.end()) {
      index[key] = out.size();
      out.push_back({r.field, r.estimate, r.result.lambda, r.result.tau, 1.0});
      first.push_back(r.result.ratio);
      continue;
    }
    GrowthSummary& g = out[it->second];
    g.growth = std::max(g.growth, r.result.ratio / first[it->second]);
  }
  return out;
}

}  // namespace bulksurf
