#include "bulksurf/inverse.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <limits>
#include <memory>
#include <ostream>
#include <random>

#include <Eigen/Eigenvalues>

#include "bulksurf/errors.hpp"
#include "bulksurf/parallel.hpp"

namespace bulksurf {

namespace {

TermList semilinear_terms(const PotentialSet& pot, const Nonlinearity& f, const Nonlinearity& g) {
  return {std::make_shared<SemilinearTerms>(pot.p13, pot.q13, f, g)};
}

void check_memory(const ModelSetup& s) {
  const double bytes = 8.0 * (s.n_steps + 1.0) * 2.0 * (s.mesh.n_bulk() + s.mesh.n_surface());
  if (bytes > s.memory_budget_bytes)
    throw NumericalError("checkpoint storage exhausted: " + std::to_string(s.n_steps) +
                         " steps need " + std::to_string(bytes / 1e6) +
                         " MB, budget is " + std::to_string(s.memory_budget_bytes / 1e6) +
                         " MB; reduce T/dt");
}

std::string first_violation(const AssumptionIReport& rep) {
  const auto& v = rep.violations.front();
  std::string what = v.family == "coupling_floor" ? "p21 below p0 floor: Assumption I"
                                                  : v.family + " violated: Assumption I";
  return what + " (" + (v.on_surface ? "surface node " : "cell ") + std::to_string(v.index) +
         ", margin " + std::to_string(v.margin) + ")";
}

// Weighted L2 norm over bulk cells and surface nodes.
double mass_norm(const Mesh& mesh, const Field& bulk, const Field& surf) {
  return std::sqrt((mesh.cell_areas.array() * bulk.array().square()).sum() +
                   (mesh.surface_weights.array() * surf.array().square()).sum());
}

}  // namespace

// ---------------------------------------------------------------------------

PatchLayout PatchLayout::build(const Mesh& mesh, int n_radial, int n_angular, int n_arcs) {
  require(n_radial >= 1 && n_radial <= mesh.n_r, "inverse.patches.radial must lie in [1, n_r]");
  require(n_angular >= 1 && n_angular <= mesh.n_theta,
          "inverse.patches.angular must lie in [1, n_theta]");
  require(n_arcs >= 1 && n_arcs <= mesh.n_theta, "inverse.patches.arcs must lie in [1, n_theta]");
  PatchLayout p;
  p.n_radial = n_radial;
  p.n_angular = n_angular;
  p.n_arcs = n_arcs;
  p.cell_patch.resize(mesh.n_bulk());
  for (int c = 0; c < mesh.n_bulk(); ++c) {
    // Equal-area radial bands: band k covers R sqrt(k/n) <= r < R sqrt((k+1)/n).
    const double rr = mesh.cell_r[c] / mesh.radius;
    const int pr = std::min(n_radial - 1, static_cast<int>(rr * rr * n_radial));
    const int pa = mesh.sector_of(c) * n_angular / mesh.n_theta;
    p.cell_patch[c] = pr * n_angular + pa;
  }
  p.node_arc.resize(mesh.n_surface());
  for (int j = 0; j < mesh.n_surface(); ++j) p.node_arc[j] = j * n_arcs / mesh.n_theta;
  return p;
}

Field PatchLayout::expand_bulk(const Field& v) const {
  require(v.size() == n_patches(), "patch vector has the wrong size");
  Field out(cell_patch.size());
  for (std::size_t c = 0; c < cell_patch.size(); ++c) out[c] = v[cell_patch[c]];
  return out;
}

Field PatchLayout::expand_surface(const Field& v) const {
  require(v.size() == n_arcs, "arc vector has the wrong size");
  Field out(node_arc.size());
  for (std::size_t j = 0; j < node_arc.size(); ++j) out[j] = v[node_arc[j]];
  return out;
}

Field PatchLayout::sum_bulk(const Field& cells) const {
  Field out = Field::Zero(n_patches());
  for (std::size_t c = 0; c < cell_patch.size(); ++c) out[cell_patch[c]] += cells[c];
  return out;
}

Field PatchLayout::sum_surface(const Field& nodes) const {
  Field out = Field::Zero(n_arcs);
  for (std::size_t j = 0; j < node_arc.size(); ++j) out[node_arc[j]] += nodes[j];
  return out;
}

// ---------------------------------------------------------------------------

CoefficientVector CoefficientVector::constant(const PatchLayout& layout, double p13, double p21,
                                              double q13, double q21, double R_bound, double p0) {
  CoefficientVector c;
  c.p13 = Field::Constant(layout.n_patches(), p13);
  c.p21 = Field::Constant(layout.n_patches(), p21);
  c.q13 = Field::Constant(layout.n_arcs, q13);
  c.q21 = Field::Constant(layout.n_arcs, q21);
  c.R_bound = R_bound;
  c.p0 = p0;
  return c;
}

Field CoefficientVector::pack() const {
  Field v(size());
  v << p13, p21, q13, q21;
  return v;
}

CoefficientVector CoefficientVector::with_values(const Field& v) const {
  require(v.size() == size(), "coefficient vector has the wrong size");
  CoefficientVector c = *this;
  Eigen::Index o = 0;
  for (Field* f : {&c.p13, &c.p21, &c.q13, &c.q21}) {
    *f = v.segment(o, f->size());
    o += f->size();
  }
  return c;
}

Field CoefficientVector::lower_bounds() const {
  Field lo(size());
  const double floor = std::max(-R_bound, p0);
  lo << Field::Constant(p13.size(), -R_bound), Field::Constant(p21.size(), floor),
      Field::Constant(q13.size(), -R_bound), Field::Constant(q21.size(), floor);
  return lo;
}

Field CoefficientVector::upper_bounds() const { return Field::Constant(size(), R_bound); }

CoefficientVector CoefficientVector::projected() const {
  return with_values(pack().cwiseMax(lower_bounds()).cwiseMin(upper_bounds()));
}

bool CoefficientVector::admissible() const {
  const Field v = pack();
  return (v.array() >= lower_bounds().array()).all() && (v.array() <= upper_bounds().array()).all();
}

Field ActiveSet::mask(const CoefficientVector& c) const {
  Field m(c.size());
  m << Field::Constant(c.p13.size(), p13 ? 1.0 : 0.0), Field::Constant(c.p21.size(), p21 ? 1.0 : 0.0),
      Field::Constant(c.q13.size(), q13 ? 1.0 : 0.0), Field::Constant(c.q21.size(), q21 ? 1.0 : 0.0);
  return m;
}

// ---------------------------------------------------------------------------

PotentialSet ModelSetup::potentials_for(const CoefficientVector& c,
                                        const PatchLayout& layout) const {
  PotentialSet p = potentials;
  p.p13 = layout.expand_bulk(c.p13);
  p.p21 = layout.expand_bulk(c.p21);
  p.q13 = layout.expand_surface(c.q13);
  p.q21 = layout.expand_surface(c.q21);
  return p;
}

Trajectory ModelSetup::solve(const PotentialSet& pot) const {
  check_memory(*this);
  ImexStepper stepper(mesh, diffusion, pot, semilinear_terms(pot, f, g), dt);
  return stepper.solve_steps(init.to_state(0.0), n_steps);
}

ObservationRecord predict(const InverseSetup& setup, const CoefficientVector& c) {
  const ModelSetup& m = setup.model;
  return observe(m.solve(m.potentials_for(c, setup.layout)), m.mesh, m.regions);
}

ObservationRecord simulate_twin(const InverseSetup& setup, const CoefficientVector& truth,
                                double noise_level, std::uint64_t seed) {
  require(noise_level >= 0.0, "inverse.noise_level must be nonnegative");
  const ModelSetup& m = setup.model;
  const PotentialSet pot = m.potentials_for(truth, setup.layout);
  const AssumptionIReport a1 =
      validate_assumption_I(pot, pot, m.f, m.g, m.init, m.r_floor, truth.p0);
  if (!a1.ok) throw ValidationError(first_violation(a1));
  const Trajectory traj = m.solve(pot);
  const AssumptionIIReport a2 = validate_assumption_II(m.f, m.g, traj, m.regions.theta, m.r1);
  if (!a2.ok)
    throw ValidationError("reference fails Assumption II: min |f| = " +
                          std::to_string(a2.min_abs_f) + ", min |g| = " +
                          std::to_string(a2.min_abs_g) + ", r1 = " + std::to_string(m.r1) +
                          (a2.lipschitz_ok ? "" : ", sampled partials exceed the Lipschitz bound"));
  ObservationRecord rec = observe(traj, m.mesh, m.regions);
  if (noise_level > 0.0 && rec.values.size() > 0) {
    const double total_w = rec.cell_weights.sum() * static_cast<double>(rec.values.rows());
    const double rms = std::sqrt(rec.squared_norm() / total_w);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index r = 0; r < rec.values.rows(); ++r)
      for (Eigen::Index k = 0; k < rec.values.cols(); ++k)
        rec.values(r, k) += noise_level * rms * normal(rng);
  }
  return rec;
}

namespace {

double penalty(const InverseSetup& setup, const CoefficientVector& c, Field* grad) {
  if (setup.reg_weight == 0.0) {
    if (grad) grad->setZero(c.size());
    return 0.0;
  }
  require(setup.prior.size() == c.size(), "inverse.prior has the wrong shape");
  const Field d = (c.pack() - setup.prior.pack()).cwiseProduct(setup.active.mask(c));
  if (grad) *grad = setup.reg_weight * d;
  return 0.5 * setup.reg_weight * d.squaredNorm();
}

}  // namespace

double objective(const InverseSetup& setup, const CoefficientVector& c,
                 const ObservationRecord& obs) {
  const ObservationRecord r = predict(setup, c) - obs;
  return 0.5 * r.squared_norm() + penalty(setup, c, nullptr);
}

ObjectiveGradient objective_gradient(const InverseSetup& setup, const CoefficientVector& c,
                                     const ObservationRecord& obs) {
  const ModelSetup& m = setup.model;
  const Mesh& mesh = m.mesh;
  check_memory(m);
  const PotentialSet pot = m.potentials_for(c, setup.layout);
  ImexStepper stepper(mesh, m.diffusion, pot, semilinear_terms(pot, m.f, m.g), m.dt);
  const Trajectory traj = stepper.solve_steps(m.init.to_state(0.0), m.n_steps);
  const ObservationRecord res = observe(traj, mesh, m.regions) - obs;

  ObjectiveGradient out;
  out.data_term = 0.5 * res.squared_norm();
  Field reg_grad;
  out.value = out.data_term + penalty(setup, c, &reg_grad);

  const int nb = mesh.n_bulk(), ns = mesh.n_surface();
  const int z_off = nb + ns;
  const int n_total = static_cast<int>(traj.size());
  const double dt = m.dt;

  // dJ/dX^n: each residual row is a centered difference of z.
  std::vector<Field> dJ(n_total, Field::Zero(stepper.dimension()));
  for (Eigen::Index r = 0; r < res.values.rows(); ++r) {
    const int n = res.time_nodes[r];
    for (std::size_t k = 0; k < res.cells.size(); ++k) {
      const double w = res.cell_weights[k] * res.values(r, k) / (2.0 * dt);
      dJ[n + 1][z_off + res.cells[k]] += w;
      dJ[n - 1][z_off + res.cells[k]] -= w;
    }
  }

  Field g_p13 = Field::Zero(nb), g_p21 = Field::Zero(nb);
  Field g_q13 = Field::Zero(ns), g_q21 = Field::Zero(ns);
  const Field& mass = stepper.mass();
  Field lambda = dJ[n_total - 1];
  for (int n = n_total - 2; n >= 0; --n) {
    const Field mu = stepper.solve_transpose(lambda);
    const SystemState& xn = traj.states[n];
    const SystemState& xn1 = traj.states[n + 1];
    for (int k = 0; k < nb; ++k) {
      g_p13[k] += dt * mu[k] * mesh.cell_areas[k] * m.f(xn.y[k], xn.z[k]);
      g_p21[k] += dt * mu[z_off + k] * mesh.cell_areas[k] * xn1.y[k];
    }
    for (int j = 0; j < ns; ++j) {
      const double ds = mesh.surface_weights[j];
      g_q13[j] += dt * mu[nb + j] * ds * m.g(xn.y_gamma[j], xn.z_gamma[j]);
      g_q21[j] += dt * mu[z_off + nb + j] * ds * xn1.y_gamma[j];
    }
    const Field mmu = mass.cwiseProduct(mu);
    lambda = dJ[n] + mmu + dt * stepper.explicit_jacobian_transpose(xn, xn.t, mmu);
  }

  out.gradient.resize(c.size());
  out.gradient << setup.layout.sum_bulk(g_p13), setup.layout.sum_bulk(g_p21),
      setup.layout.sum_surface(g_q13), setup.layout.sum_surface(g_q21);
  out.gradient = (out.gradient + reg_grad).cwiseProduct(setup.active.mask(c));
  return out;
}

GradientCheckReport gradient_check(const InverseSetup& setup, const CoefficientVector& center,
                                   const ObservationRecord& obs, int n_points, int n_directions,
                                   double h, double spread, std::uint64_t seed, int threads) {
  require(n_points >= 1 && n_directions >= 1, "gradcheck needs at least one point and direction");
  require(h > 0.0, "gradcheck.h must be positive");
  const Field mask = setup.active.mask(center);
  require(mask.sum() > 0.0, "gradcheck: no active coefficients");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<CoefficientVector> points;
  for (int p = 0; p < n_points; ++p) {
    Field v = center.pack();
    for (Eigen::Index i = 0; i < v.size(); ++i)
      if (mask[i] > 0.0) v[i] += spread * uni(rng);
    points.push_back(center.with_values(v).projected());
  }
  std::vector<Field> dirs;
  for (int d = 0; d < n_points * n_directions; ++d) {
    Field v(center.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = mask[i] > 0.0 ? normal(rng) : 0.0;
    dirs.push_back(v / v.norm());
  }

  std::vector<Field> grads(n_points);
  parallel_for(n_points, threads, [&](std::size_t p) {
    grads[p] = objective_gradient(setup, points[p], obs).gradient;
  });

  GradientCheckReport rep;
  rep.h = h;
  rep.rows.resize(static_cast<std::size_t>(n_points) * n_directions);
  parallel_for(rep.rows.size(), threads, [&](std::size_t i) {
    const int p = static_cast<int>(i) / n_directions;
    const Field& v = dirs[i];
    const Field x = points[p].pack();
    // Directions are not projected: the objective is smooth past the bounds.
    const double jp = objective(setup, points[p].with_values(x + h * v), obs);
    const double jm = objective(setup, points[p].with_values(x - h * v), obs);
    GradientCheckRow row;
    row.point = p;
    row.direction = static_cast<int>(i) % n_directions;
    row.finite_difference = (jp - jm) / (2.0 * h);
    row.adjoint = grads[p].dot(v);
    const double denom = std::max(std::abs(row.finite_difference), std::abs(row.adjoint));
    row.relative_error = denom > 0.0 ? std::abs(row.finite_difference - row.adjoint) / denom : 0.0;
    rep.rows[i] = row;
  });
  for (const auto& r : rep.rows) rep.max_relative_error = std::max(rep.max_relative_error, r.relative_error);
  return rep;
}

// ---------------------------------------------------------------------------

Field coefficient_weights(const InverseSetup& setup) {
  const Mesh& mesh = setup.model.mesh;
  const Field pw = setup.layout.sum_bulk(mesh.cell_areas);
  const Field aw = setup.layout.sum_surface(mesh.surface_weights);
  Field w(2 * pw.size() + 2 * aw.size());
  w << pw, pw, aw, aw;
  return w;
}

namespace {

// J^T J + reg W^{-1} in the variables u = W^{1/2} c, from forward differences
// of the prediction. Rows and columns of inactive entries are identity.
Eigen::MatrixXd gauss_newton_matrix(const InverseSetup& setup, const CoefficientVector& c,
                                    const Field& sw, const Field& mask, int threads) {
  const int n = c.size();
  const ObservationRecord base = predict(setup, c);
  const Eigen::Index m = base.values.size();
  std::vector<int> idx;
  for (int i = 0; i < n; ++i)
    if (mask[i] > 0.0) idx.push_back(i);
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(m, static_cast<Eigen::Index>(idx.size()));
  parallel_for(idx.size(), threads, [&](std::size_t a) {
    const int i = idx[a];
    Field u = c.pack().cwiseProduct(sw);
    const double h = 1e-6 * std::max(1.0, std::abs(u[i]));
    u[i] += h;
    const ObservationRecord o = predict(setup, c.with_values(u.cwiseQuotient(sw)));
    Eigen::Index k = 0;
    for (Eigen::Index r = 0; r < o.values.rows(); ++r)
      for (Eigen::Index col = 0; col < o.values.cols(); ++col, ++k)
        J(k, a) = std::sqrt(base.cell_weights[col]) * (o.values(r, col) - base.values(r, col)) / h;
  });
  const Eigen::MatrixXd jtj = J.transpose() * J;
  Eigen::MatrixXd out = Eigen::MatrixXd::Identity(n, n);
  const double floor = 1e-12 * std::max(jtj.diagonal().maxCoeff(), 1e-300);
  for (std::size_t a = 0; a < idx.size(); ++a) {
    for (std::size_t b = 0; b < idx.size(); ++b) out(idx[a], idx[b]) = jtj(a, b);
    out(idx[a], idx[a]) += setup.reg_weight / (sw[idx[a]] * sw[idx[a]]) + floor;
  }
  return out;
}

}  // namespace

ReconstructionResult reconstruct(const InverseSetup& setup, const ObservationRecord& obs,
                                 const CoefficientVector& initial, const OptimizerConfig& opt) {
  require(opt.max_iter >= 0, "optimizer.max_iter must be nonnegative");
  require(opt.memory >= 1, "optimizer.memory must be positive");
  require(initial.admissible(), "inverse.initial_guess is not admissible");

  // Iterates live in u = W^{1/2} c, so Euclidean steps in u are L2 steps in c.
  const Field sw = coefficient_weights(setup).cwiseSqrt();
  const Field mask = setup.active.mask(initial);
  const Field lo = initial.lower_bounds().cwiseProduct(sw);
  const Field hi = initial.upper_bounds().cwiseProduct(sw);
  auto project = [&](const Field& v) { return v.cwiseMax(lo).cwiseMin(hi); };
  auto coeffs = [&](const Field& u) { return initial.with_values(u.cwiseQuotient(sw)); };
  auto evaluate = [&](const Field& u) {
    ObjectiveGradient e = objective_gradient(setup, coeffs(u), obs);
    e.gradient = e.gradient.cwiseQuotient(sw);
    return e;
  };
  auto projected_gradient = [&](const Field& x, const Field& g) {
    return (project(x - g) - x).cwiseProduct(mask).lpNorm<Eigen::Infinity>();
  };

  ReconstructionResult out;
  Field x = initial.pack().cwiseProduct(sw);
  ObjectiveGradient eval = evaluate(x);
  double fx = eval.value;
  Field g = eval.gradient;
  double pg = projected_gradient(x, g);
  const double pg0 = pg;
  out.history.push_back({0, fx, pg, 0.0, 1});

  std::deque<std::pair<Field, Field>> memory;
  auto finish = [&](bool converged, std::string reason) {
    out.coeffs = coeffs(x).projected();
    out.converged = converged;
    out.stop_reason = std::move(reason);
    return out;
  };
  const double tol = std::max(opt.tolerance, opt.rel_tolerance * pg0);
  if (pg <= opt.tolerance) return finish(true, "projected gradient below tolerance");
  const double first_move = 0.1 * sw.maxCoeff();

  Eigen::MatrixXd gn;
  if (opt.gauss_newton_seed) gn = gauss_newton_matrix(setup, coeffs(x), sw, mask, opt.threads);
  // H0 q on the free variables: (GN_ff)^{-1} q_f, or gamma q without a seed.
  auto apply_h0 = [&](const Field& q, const Field& free, double gamma) -> Field {
    if (gn.size() == 0) return gamma * q;
    std::vector<int> idx;
    for (Eigen::Index i = 0; i < free.size(); ++i)
      if (free[i] > 0.0) idx.push_back(static_cast<int>(i));
    const int nf = static_cast<int>(idx.size());
    Eigen::MatrixXd h(nf, nf);
    Eigen::VectorXd b(nf);
    for (int a = 0; a < nf; ++a) {
      b[a] = q[idx[a]];
      for (int c = 0; c < nf; ++c) h(a, c) = gn(idx[a], idx[c]);
    }
    const Eigen::VectorXd r = h.ldlt().solve(b);
    Field out = Field::Zero(q.size());
    for (int a = 0; a < nf; ++a) out[idx[a]] = r[a];
    return out;
  };

  for (int it = 1; it <= opt.max_iter; ++it) {
    if (gn.size() > 0 && opt.gauss_newton_refresh > 0 && it > 1 &&
        (it - 1) % opt.gauss_newton_refresh == 0) {
      gn = gauss_newton_matrix(setup, coeffs(x), sw, mask, opt.threads);
      memory.clear();
    }
    // Free variables: active and not pinned at a bound by the gradient.
    Field free = mask;
    for (Eigen::Index i = 0; i < x.size(); ++i)
      if ((x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0)) free[i] = 0.0;

    Field q = g.cwiseProduct(free);
    std::vector<double> alpha(memory.size());
    for (int k = static_cast<int>(memory.size()) - 1; k >= 0; --k) {
      const auto& [s, y] = memory[k];
      alpha[k] = s.dot(q) / y.dot(s);
      q -= alpha[k] * y;
    }
    double step0 = 1.0;
    if (gn.size() > 0) {
      q = apply_h0(q, free, 1.0);
    } else if (!memory.empty()) {
      const auto& [s, y] = memory.back();
      q *= s.dot(y) / y.dot(y);
    } else {
      // Without curvature pairs the first trial moves one coefficient by about 0.1.
      const double gmax = q.lpNorm<Eigen::Infinity>();
      step0 = gmax > 0.0 ? first_move / gmax : 1.0;
    }
    for (std::size_t k = 0; k < memory.size(); ++k) {
      const auto& [s, y] = memory[k];
      const double beta = y.dot(q) / y.dot(s);
      q += (alpha[k] - beta) * s;
    }
    Field d = -q.cwiseProduct(free);
    if (!(g.dot(d) < 0.0)) {
      memory.clear();
      d = -g.cwiseProduct(free);
      const double gmax = d.lpNorm<Eigen::Infinity>();
      step0 = gmax > 0.0 ? first_move / gmax : 1.0;
    }

    double t = step0;
    bool accepted = false;
    Field xn;
    ObjectiveGradient en;
    int evals = 0;
    for (int b = 0; b <= opt.max_backtracks; ++b, t *= 0.5) {
      xn = project(x + t * d);
      ++evals;
      try {
        en = evaluate(xn);
      } catch (const std::runtime_error&) {
        // Trial outside the solver's stability bound or a failed solve.
        continue;
      }
      const double decrease = g.dot(xn - x);
      if (std::isfinite(en.value) && en.value <= fx && en.value <= fx + opt.armijo * decrease) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      out.line_search_failed = true;
      return finish(false, "line search failed after " + std::to_string(opt.max_backtracks) +
                               " backtracks");
    }
    const Field s = xn - x;
    const Field y = en.gradient - g;
    if (s.dot(y) > 1e-12 * s.norm() * y.norm()) {
      memory.emplace_back(s, y);
      if (static_cast<int>(memory.size()) > opt.memory) memory.pop_front();
    }
    x = xn;
    fx = en.value;
    g = en.gradient;
    pg = projected_gradient(x, g);
    out.history.push_back({it, fx, pg, t, evals});
    if (pg <= tol) return finish(true, "projected gradient below tolerance");
    if (s.lpNorm<Eigen::Infinity>() == 0.0) return finish(false, "step vanished");
  }
  return finish(false, "iteration budget exhausted");
}

double relative_coefficient_error(const InverseSetup& setup, const CoefficientVector& est,
                                  const CoefficientVector& truth) {
  const Field w = coefficient_weights(setup);
  const Field e = est.pack(), t = truth.pack();
  const Field on = setup.active.mask(truth);
  double num = 0.0, den = 0.0;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    num += on[i] * w[i] * (e[i] - t[i]) * (e[i] - t[i]);
    den += on[i] * w[i] * t[i] * t[i];
  }
  require(den > 0.0, "relative error undefined for zero truth");
  return std::sqrt(num / den);
}

void write_history_csv(std::ostream& os, const std::vector<IterationRecord>& history) {
  char buf[160];
  os << "iter,objective,projected_gradient,step,evaluations\n";
  for (const auto& h : history) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%d\n", h.iter, h.objective,
                  h.projected_gradient, h.step, h.evaluations);
    os << buf;
  }
}

void write_coefficients_csv(std::ostream& os, const CoefficientVector& c) {
  char buf[96];
  os << "block,index,value\n";
  auto block = [&](const char* name, const Field& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%s,%ld,%.17g\n", name, static_cast<long>(i), v[i]);
      os << buf;
    }
  };
  block("p13", c.p13);
  block("p21", c.p21);
  block("q13", c.q13);
  block("q21", c.q21);
}

// ---------------------------------------------------------------------------

Perturbation Perturbation::scaled(double s) const { return {s * a1, s * a2, s * l1, s * l2}; }

double Perturbation::norm(const Mesh& mesh) const {
  return mass_norm(mesh, a1, l1) + mass_norm(mesh, a2, l2);
}

Perturbation sample_perturbation(const Mesh& mesh, double scale, std::uint64_t seed) {
  Perturbation p;
  p.a1 = p.a2 = Field::Zero(mesh.n_bulk());
  p.l1 = p.l2 = Field::Zero(mesh.n_surface());
  if (scale == 0.0) return p;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> size(0.5, 1.5);
  // Low-order polynomial and Fourier modes keep every draw smooth.
  auto bulk = [&] {
    double c[6];
    for (double& v : c) v = normal(rng);
    Field f = mesh.sample_bulk([&](Point x) {
      return c[0] + c[1] * x[0] + c[2] * x[1] + c[3] * (x[0] * x[0] - x[1] * x[1]) +
             c[4] * 2.0 * x[0] * x[1] + c[5] * (x.squaredNorm() - 0.5);
    });
    const double n = std::sqrt((mesh.cell_areas.array() * f.array().square()).sum());
    return Field(f * (scale * size(rng) / n));
  };
  auto surface = [&] {
    double c[5];
    for (double& v : c) v = normal(rng);
    Field f(mesh.n_surface());
    for (int j = 0; j < mesh.n_surface(); ++j) {
      const double th = mesh.surface_s[j] / mesh.radius;
      f[j] = c[0] + c[1] * std::cos(th) + c[2] * std::sin(th) + c[3] * std::cos(2 * th) +
             c[4] * std::sin(2 * th);
    }
    const double n = std::sqrt((mesh.surface_weights.array() * f.array().square()).sum());
    return Field(f * (scale * size(rng) / n));
  };
  p.a1 = bulk();
  p.a2 = bulk();
  p.l1 = surface();
  p.l2 = surface();
  return p;
}

namespace {

PotentialSet perturbed(const PotentialSet& base, const Perturbation& d) {
  PotentialSet p = base;
  p.p13 += d.a1;
  p.p21 += d.a2;
  p.q13 += d.l1;
  p.q21 += d.l2;
  return p;
}

int node_of(double t, double dt, const std::string& what) {
  const double k = t / dt;
  const int n = static_cast<int>(std::lround(k));
  require(std::abs(k - n) < 1e-6, what + " = " + std::to_string(t) +
                                      " is not a time-grid node (multiple of dt)");
  return n;
}

Trajectory slice(const Trajectory& traj, int from, int to) {
  Trajectory out;
  out.dt = traj.dt;
  out.states.assign(traj.states.begin() + from, traj.states.begin() + to + 1);
  return out;
}

MidtimeErrors midtime_errors(const ModelSetup& s, const ImexStepper& pert_stepper,
                             const Perturbation& d, const SystemState& xt,
                             const SystemState& xt_next) {
  const SystemState x1 = pert_stepper.step(xt);
  const double dt = s.dt;
  Field py(xt.y.size()), pyg(xt.y_gamma.size());
  for (Eigen::Index i = 0; i < py.size(); ++i) py[i] = d.a1[i] * s.f(xt.y[i], xt.z[i]);
  for (Eigen::Index j = 0; j < pyg.size(); ++j)
    pyg[j] = d.l1[j] * s.g(xt.y_gamma[j], xt.z_gamma[j]);
  const Field pz = d.a2.cwiseProduct(xt.y);
  const Field pzg = d.l2.cwiseProduct(xt.y_gamma);
  const Field uy = (x1.y - xt_next.y) / dt, uyg = (x1.y_gamma - xt_next.y_gamma) / dt;
  const Field uz = (x1.z - xt_next.z) / dt, uzg = (x1.z_gamma - xt_next.z_gamma) / dt;

  auto rel = [](double e, double r) { return r > 0.0 ? e / r : e; };
  auto full = [&](const Field& nb, const Field& ns, const Field& pb, const Field& ps) {
    return rel(mass_norm(s.mesh, nb - pb, ns - ps), mass_norm(s.mesh, pb, ps));
  };
  auto interior = [&](const Field& nb, const Field& pb) {
    double e = 0.0, r = 0.0;
    for (int c : s.regions.omega) {
      e += s.mesh.cell_areas[c] * (nb[c] - pb[c]) * (nb[c] - pb[c]);
      r += s.mesh.cell_areas[c] * pb[c] * pb[c];
    }
    return rel(std::sqrt(e), std::sqrt(r));
  };
  return {interior(uy, py), interior(uz, pz), full(uy, uyg, py, pyg), full(uz, uzg, pz, pzg)};
}

// M-orthonormal low-frequency modes of the block-diagonal diffusion operator.
struct ModalBasis {
  Eigen::MatrixXd V;  // columns are modes
  Field eigenvalues;
};

ModalBasis diffusion_modes(const ImexStepper& st, double cutoff) {
  const int n = st.dimension();
  const int nb = st.mesh().n_bulk(), ns = st.mesh().n_surface();
  const int half = nb + ns;
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n, n);
  K.block(0, 0, half, half) = Eigen::MatrixXd(st.bulk_operator(0).stiffness);
  K.block(nb, nb, ns, ns) += Eigen::MatrixXd(st.surface_operator(0).stiffness);
  K.block(half, half, half, half) = Eigen::MatrixXd(st.bulk_operator(1).stiffness);
  K.block(half + nb, half + nb, ns, ns) += Eigen::MatrixXd(st.surface_operator(1).stiffness);
  const Eigen::MatrixXd M = st.mass().asDiagonal();
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(-K, M);
  if (es.info() != Eigen::Success) throw NumericalError("modal decomposition failed");
  int k = 0;
  while (k < n && es.eigenvalues()[k] <= cutoff) ++k;
  ModalBasis b;
  b.V = es.eigenvectors().leftCols(k);
  b.eigenvalues = es.eigenvalues().head(k);
  return b;
}

// Linearized difference (perturbed minus reference) integrated backward from
// zero at theta, restricted to the modal subspace. Returns packed deltas at
// nodes n_from..n_theta.
std::vector<Field> backward_difference(const ModelSetup& s, const ImexStepper& pert,
                                       const ModalBasis& basis, const Perturbation& d,
                                       const Trajectory& tilde, int n_from, int n_theta) {
  const int nb = s.mesh.n_bulk(), ns = s.mesh.n_surface();
  const int half = nb + ns;
  const Field& mass = pert.mass();
  const Eigen::MatrixXd& V = basis.V;
  const Eigen::MatrixXd Ar = V.transpose() * (pert.generator() * V);
  const Field p13 = s.potentials.p13 + d.a1;
  const Field q13 = s.potentials.q13 + d.l1;

  auto rhs = [&](double t, const Eigen::VectorXd& c) -> Eigen::VectorXd {
    const SystemState x = tilde.at(t);
    const Field delta = V * c;
    Field r = Field::Zero(2 * half);
    for (int i = 0; i < nb; ++i) {
      const auto fp = s.f.partials(x.y[i], x.z[i]);
      r[i] = p13[i] * (fp[0] * delta[i] + fp[1] * delta[half + i]) + d.a1[i] * s.f(x.y[i], x.z[i]);
      r[half + i] = d.a2[i] * x.y[i];
    }
    for (int j = 0; j < ns; ++j) {
      const auto gp = s.g.partials(x.y_gamma[j], x.z_gamma[j]);
      r[nb + j] = q13[j] * (gp[0] * delta[nb + j] + gp[1] * delta[half + nb + j]) +
                  d.l1[j] * s.g(x.y_gamma[j], x.z_gamma[j]);
      r[half + nb + j] = d.l2[j] * x.y_gamma[j];
    }
    return Ar * c + V.transpose() * mass.cwiseProduct(r);
  };

  const double dt = s.dt;
  std::vector<Field> out(n_theta - n_from + 1);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(V.cols());
  out.back() = Field::Zero(2 * half);
  for (int n = n_theta; n > n_from; --n) {
    const double t = tilde.time(n);
    const double h = -dt;
    const Eigen::VectorXd k1 = rhs(t, c);
    const Eigen::VectorXd k2 = rhs(t + 0.5 * h, c + 0.5 * h * k1);
    const Eigen::VectorXd k3 = rhs(t + 0.5 * h, c + 0.5 * h * k2);
    const Eigen::VectorXd k4 = rhs(t + h, c + h * k3);
    c += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    out[n - 1 - n_from] = V * c;
  }
  return out;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

MidtimeErrors midtime_identity_errors(const ModelSetup& s, const Perturbation& d) {
  const int n_theta = node_of(s.regions.theta, s.dt, "regions.theta");
  require(n_theta + 1 <= s.n_steps, "regions.theta lies beyond the simulated horizon");
  const Trajectory tilde = s.solve(s.potentials);
  const PotentialSet pp = perturbed(s.potentials, d);
  ImexStepper pert(s.mesh, s.diffusion, pp, semilinear_terms(pp, s.f, s.g), s.dt);
  return midtime_errors(s, pert, d, tilde.states[n_theta], tilde.states[n_theta + 1]);
}

StabilityReport stability_ensemble(const ModelSetup& s, const StabilityConfig& cfg) {
  require(cfg.n_draws >= 1, "stability.draws must be positive");
  require(cfg.scale >= 0.0, "stability.scale must be nonnegative");
  const bool full = cfg.mode == StabilityMode::full_window_regularized;
  const RegionSet& reg = s.regions;

  StabilityReport rep;
  rep.mode = cfg.mode;
  rep.experimental = full;
  rep.measurement = full ? "full window (experimental)" : "half-window variant";
  rep.scale = cfg.scale;
  rep.seed = cfg.seed;

  // theta is snapped to the nearest grid node; the window end need not be one.
  const int n_theta = static_cast<int>(std::lround(reg.theta / s.dt));
  const int n_end = std::min(s.n_steps, static_cast<int>(std::ceil(reg.t1 / s.dt - 1e-9)));
  require(n_theta >= 1 && n_theta + 2 < n_end,
          "stability: (theta, t1) must contain at least two time steps");
  rep.theta = n_theta * s.dt;

  ModelSetup ref = s;
  ref.n_steps = n_end;
  ref.potentials.stability_admissible = true;
  ref.potentials.validate(ref.mesh);  // reference itself must respect the p0 floor
  const Trajectory tilde = ref.solve(ref.potentials);
  const Trajectory tail = slice(tilde, n_theta, n_end);
  const ObservationRecord obs_tilde = observe_window(tail, s.mesh, reg.omega, rep.theta, reg.t1);
  const int n_from = static_cast<int>(std::floor(reg.t0 / s.dt + 1e-9));

  // Draws are fixed serially so rejection sampling stays deterministic.
  std::mt19937_64 rng(cfg.seed);
  std::vector<Perturbation> draws;
  for (int d = 0; d < cfg.n_draws; ++d) {
    for (int attempt = 0;; ++attempt) {
      if (attempt > cfg.max_resamples)
        throw ValidationError("stability: no admissible perturbation after " +
                              std::to_string(cfg.max_resamples) +
                              " resamples; p21 below p0 floor: Assumption I");
      Perturbation p = sample_perturbation(s.mesh, cfg.scale, rng());
      try {
        perturbed(ref.potentials, p).validate(s.mesh);
        draws.push_back(std::move(p));
        break;
      } catch (const ValidationError&) {
        ++rep.rejected;
      }
    }
  }

  ModalBasis basis;
  if (full) {
    require(n_from >= 0 && n_from < n_theta, "stability: t0 must precede theta");
    const double cutoff = std::log(cfg.damping_cap) / (rep.theta - n_from * s.dt);
    const ImexStepper probe(s.mesh, s.diffusion, ref.potentials,
                            semilinear_terms(ref.potentials, s.f, s.g), s.dt);
    basis = diffusion_modes(probe, cutoff);
    rep.kept_modes = static_cast<int>(basis.V.cols());
  }

  rep.records.resize(draws.size());
  parallel_for(draws.size(), cfg.threads, [&](std::size_t i) {
    StabilityRecord r;
    r.draw = static_cast<int>(i);
    const Perturbation& d = draws[i];
    r.delta_norm = d.norm(s.mesh);

    auto response = [&](const Perturbation& dd, Trajectory* keep) {
      const PotentialSet pp = perturbed(ref.potentials, dd);
      auto st = std::make_unique<ImexStepper>(s.mesh, s.diffusion, pp,
                                              semilinear_terms(pp, s.f, s.g), s.dt);
      Trajectory tr = st->solve_steps(tilde.states[n_theta], n_end - n_theta);
      const double norm =
          (observe_window(tr, s.mesh, reg.omega, rep.theta, reg.t1) - obs_tilde).norm();
      if (keep) *keep = std::move(tr);
      return std::make_pair(norm, std::move(st));
    };
    Trajectory pert_tail;
    auto [obs_norm, stepper] = response(d, &pert_tail);
    r.obs_norm = obs_norm;
    r.obs_norm_half = response(d.scaled(0.5), nullptr).first;
    r.midtime = midtime_errors(s, *stepper, d, tilde.states[n_theta], tilde.states[n_theta + 1]);

    double measured = obs_norm;
    if (full) {
      const std::vector<Field> back =
          backward_difference(s, *stepper, basis, d, tilde, n_from, n_theta);
      Trajectory diff;
      diff.dt = s.dt;
      for (int n = n_from; n <= n_theta; ++n)
        diff.states.push_back(stepper->unpack(back[n - n_from], tilde.time(n)));
      for (int n = n_theta + 1; n <= n_end; ++n) {
        SystemState x = pert_tail.states[n - n_theta];
        x -= tilde.states[n];
        x.t = tilde.time(n);
        diff.states.push_back(std::move(x));
      }
      r.full_window_obs_norm = observe_window(diff, s.mesh, reg.omega, reg.t0, reg.t1).norm();
      measured = r.full_window_obs_norm;
    }

    r.indeterminate = !(r.delta_norm > 0.0 && measured > 0.0);
    if (!r.indeterminate) {
      r.ratio = r.delta_norm / measured;
      r.linear_response = 2.0 * r.obs_norm_half / r.obs_norm;
    }
    rep.records[i] = r;
  });

  std::vector<double> ratios;
  for (const auto& r : rep.records) {
    if (r.indeterminate) continue;
    ratios.push_back(r.ratio);
    rep.max_midtime_error = std::max({rep.max_midtime_error, r.midtime.y, r.midtime.z});
    rep.max_midtime_error_full =
        std::max({rep.max_midtime_error_full, r.midtime.y_full, r.midtime.z_full});
    rep.max_linear_response_deviation =
        std::max(rep.max_linear_response_deviation, std::abs(r.linear_response - 1.0));
  }
  if (!ratios.empty()) {
    rep.max_ratio = *std::max_element(ratios.begin(), ratios.end());
    rep.median_ratio = median(ratios);
    rep.spread = rep.max_ratio / rep.median_ratio;
  }
  return rep;
}

void write_stability_csv(std::ostream& os, const StabilityReport& rep) {
  char buf[512];
  os << "draw,delta_norm,obs_norm,ratio,obs_norm_half,linear_response,midtime_error_y,"
        "midtime_error_z,midtime_error_y_full,midtime_error_z_full,full_window_obs_norm,"
        "indeterminate\n";
  for (const auto& r : rep.records) {
    std::snprintf(buf, sizeof buf,
                  "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d\n", r.draw,
                  r.delta_norm, r.obs_norm, r.ratio, r.obs_norm_half, r.linear_response,
                  r.midtime.y, r.midtime.z, r.midtime.y_full, r.midtime.z_full,
                  r.full_window_obs_norm, r.indeterminate ? 1 : 0);
    os << buf;
  }
}

}  // namespace bulksurf
