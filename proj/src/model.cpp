#include "bulksurf/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "bulksurf/errors.hpp"

namespace bulksurf {

namespace {

double ipow(double x, int k) {
  double r = 1.0;
  for (int i = 0; i < k; ++i) r *= x;
  return r;
}

void check_size(const Field& f, Eigen::Index n, const std::string& name) {
  require(f.size() == n, name + ": expected " + std::to_string(n) + " values, got " +
                             std::to_string(f.size()));
  require(f.allFinite(), name + ": contains non-finite values");
}

}  // namespace

DiffusionSpec DiffusionSpec::uniform(const Mesh& mesh, double a, double d) {
  DiffusionSpec s;
  s.a1 = Field::Constant(mesh.n_bulk(), a);
  s.a2 = Field::Constant(mesh.n_bulk(), a);
  s.d1 = Field::Constant(mesh.n_surface(), d);
  s.d2 = Field::Constant(mesh.n_surface(), d);
  s.beta = a;
  s.beta_gamma = d;
  return s;
}

void DiffusionSpec::validate(const Mesh& mesh) const {
  require(beta > 0.0, "diffusion.beta must be positive");
  require(beta_gamma > 0.0, "diffusion.beta_gamma must be positive");
  check_size(a1, mesh.n_bulk(), "diffusion.a1");
  check_size(a2, mesh.n_bulk(), "diffusion.a2");
  check_size(d1, mesh.n_surface(), "diffusion.d1");
  check_size(d2, mesh.n_surface(), "diffusion.d2");
  require(a1.minCoeff() >= beta && a2.minCoeff() >= beta,
          "diffusion: bulk diffusivity below ellipticity floor beta");
  require(d1.minCoeff() >= beta_gamma && d2.minCoeff() >= beta_gamma,
          "diffusion: surface diffusivity below ellipticity floor beta_gamma");
}

PotentialSet PotentialSet::zeros(const Mesh& mesh, double R_bound, double p0) {
  PotentialSet p;
  for (Field* f : {&p.p11, &p.p12, &p.p13, &p.p21, &p.p22}) *f = Field::Zero(mesh.n_bulk());
  for (Field* f : {&p.q11, &p.q12, &p.q13, &p.q21, &p.q22}) *f = Field::Zero(mesh.n_surface());
  p.R_bound = R_bound;
  p.p0 = p0;
  return p;
}

Field& PotentialSet::bulk(std::string_view name) {
  if (name == "p11") return p11;
  if (name == "p12") return p12;
  if (name == "p13") return p13;
  if (name == "p21") return p21;
  if (name == "p22") return p22;
  throw ValidationError("unknown bulk potential '" + std::string(name) + "'");
}

const Field& PotentialSet::bulk(std::string_view name) const {
  return const_cast<PotentialSet*>(this)->bulk(name);
}

Field& PotentialSet::surface(std::string_view name) {
  if (name == "q11") return q11;
  if (name == "q12") return q12;
  if (name == "q13") return q13;
  if (name == "q21") return q21;
  if (name == "q22") return q22;
  throw ValidationError("unknown surface potential '" + std::string(name) + "'");
}

const Field& PotentialSet::surface(std::string_view name) const {
  return const_cast<PotentialSet*>(this)->surface(name);
}

Field& PotentialSet::by_name(std::string_view name) {
  if (!name.empty() && name[0] == 'q') return surface(name);
  return bulk(name);
}

double PotentialSet::sup_norm() const {
  double s = 0.0;
  for (const Field* f : {&p11, &p12, &p13, &p21, &p22, &q11, &q12, &q13, &q21, &q22})
    if (f->size() > 0) s = std::max(s, f->cwiseAbs().maxCoeff());
  return s;
}

double PotentialSet::linear_sup_norm() const {
  double s = 0.0;
  for (const Field* f : {&p11, &p12, &p21, &p22, &q11, &q12, &q21, &q22})
    if (f->size() > 0) s = std::max(s, f->cwiseAbs().maxCoeff());
  return s;
}

void PotentialSet::validate(const Mesh& mesh) const {
  for (auto name : {"p11", "p12", "p13", "p21", "p22"})
    check_size(bulk(name), mesh.n_bulk(), std::string("potentials.") + name);
  for (auto name : {"q11", "q12", "q13", "q21", "q22"})
    check_size(surface(name), mesh.n_surface(), std::string("potentials.") + name);
  require(sup_norm() <= R_bound * (1.0 + 1e-12),
          "potentials: sup norm " + std::to_string(sup_norm()) + " exceeds R_bound " +
              std::to_string(R_bound) + " (admissible set)");
  if (stability_admissible) {
    require(p21.minCoeff() >= p0, "p21 below p0 floor: Assumption I");
    require(q21.minCoeff() >= p0, "q21 below p0 floor: Assumption I");
  }
}

Nonlinearity make_power_nonlinearity(int d, int delta, double y_max, double z_max) {
  require(d >= 0 && delta >= 0, "power nonlinearity exponents must be nonnegative");
  require(y_max > 0.0 && z_max > 0.0, "power nonlinearity range box must be positive");
  Nonlinearity nl;
  nl.kind = Nonlinearity::Kind::power;
  nl.name = "power(" + std::to_string(d) + "," + std::to_string(delta) + ")";
  nl.d = d;
  nl.delta = delta;
  nl.y_max = y_max;
  nl.z_max = z_max;
  nl.evaluate = [d, delta](double y, double z) { return ipow(y, d) * ipow(z, delta); };
  nl.partials = [d, delta](double y, double z) -> std::array<double, 2> {
    const double fy = d == 0 ? 0.0 : d * ipow(y, d - 1) * ipow(z, delta);
    const double fz = delta == 0 ? 0.0 : delta * ipow(y, d) * ipow(z, delta - 1);
    return {fy, fz};
  };
  // |f_y| + |f_z| is maximized at the corner of the symmetric box.
  const double fy = d == 0 ? 0.0 : d * ipow(y_max, d - 1) * ipow(z_max, delta);
  const double fz = delta == 0 ? 0.0 : delta * ipow(y_max, d) * ipow(z_max, delta - 1);
  nl.lipschitz_bound = fy + fz;
  return nl;
}

Nonlinearity make_custom_nonlinearity(std::string name,
                                      std::function<double(double, double)> eval,
                                      std::function<std::array<double, 2>(double, double)> partials,
                                      double lipschitz_bound) {
  Nonlinearity nl;
  nl.kind = Nonlinearity::Kind::custom;
  nl.name = std::move(name);
  nl.evaluate = std::move(eval);
  nl.partials = std::move(partials);
  nl.lipschitz_bound = lipschitz_bound;
  return nl;
}

Nonlinearity zero_nonlinearity() {
  return make_custom_nonlinearity(
      "zero", [](double, double) { return 0.0; },
      [](double, double) { return std::array<double, 2>{0.0, 0.0}; }, 0.0);
}

InitialData InitialData::constant(const Mesh& mesh, double y, double z) {
  InitialData d;
  d.y0 = Field::Constant(mesh.n_bulk(), y);
  d.z0 = Field::Constant(mesh.n_bulk(), z);
  d.y0_gamma = Field::Constant(mesh.n_surface(), y);
  d.z0_gamma = Field::Constant(mesh.n_surface(), z);
  return d;
}

InitialData InitialData::from_functions(const Mesh& mesh, const std::function<double(Point)>& y,
                                        const std::function<double(Point)>& z) {
  InitialData d;
  d.y0 = mesh.sample_bulk(y);
  d.z0 = mesh.sample_bulk(z);
  d.y0_gamma = mesh.sample_surface(y);
  d.z0_gamma = mesh.sample_surface(z);
  return d;
}

SystemState InitialData::to_state(double t) const {
  return SystemState{y0, z0, y0_gamma, z0_gamma, t};
}

double InitialData::trace_mismatch(const Mesh& mesh) const {
  double m = 0.0;
  for (int j = 0; j < mesh.n_surface(); ++j) {
    const int c = mesh.trace_map[j];
    m = std::max({m, std::abs(y0[c] - y0_gamma[j]), std::abs(z0[c] - z0_gamma[j])});
  }
  return m;
}

void InitialData::validate(const Mesh& mesh) const {
  check_size(y0, mesh.n_bulk(), "initial.y0");
  check_size(z0, mesh.n_bulk(), "initial.z0");
  check_size(y0_gamma, mesh.n_surface(), "initial.y0_gamma");
  check_size(z0_gamma, mesh.n_surface(), "initial.z0_gamma");
}

AssumptionIReport validate_assumption_I(const PotentialSet& pot, const PotentialSet& pot_tilde,
                                        const Nonlinearity& f, const Nonlinearity& g,
                                        const InitialData& init_tilde, double r, double p0) {
  AssumptionIReport rep;
  constexpr double inf = std::numeric_limits<double>::infinity();
  rep.min_initial_floor = rep.min_bulk_reaction = rep.min_surface_reaction = inf;
  rep.min_coupling_floor = rep.min_admissible = inf;

  auto record = [&](const char* family, double& slot, bool surface, int idx, double margin) {
    slot = std::min(slot, margin);
    if (margin < 0.0) rep.violations.push_back({family, surface, idx, margin});
  };

  const auto nb = init_tilde.y0.size();
  const auto ns = init_tilde.y0_gamma.size();
  for (Eigen::Index i = 0; i < nb; ++i) {
    const int c = static_cast<int>(i);
    record("initial_floor", rep.min_initial_floor, false, c, init_tilde.y0[i] - r);
    record("initial_floor", rep.min_initial_floor, false, c, init_tilde.z0[i]);
    const double z0 = init_tilde.z0[i];
    record("bulk_reaction", rep.min_bulk_reaction, false, c,
           pot.p11[i] * r + pot.p12[i] * z0 + pot_tilde.p13[i] * f(r, z0));
    record("coupling_floor", rep.min_coupling_floor, false, c,
           std::min(pot.p21[i], pot_tilde.p21[i]) - p0);
  }
  for (Eigen::Index j = 0; j < ns; ++j) {
    const int n = static_cast<int>(j);
    record("initial_floor", rep.min_initial_floor, true, n, init_tilde.y0_gamma[j] - r);
    record("initial_floor", rep.min_initial_floor, true, n, init_tilde.z0_gamma[j]);
    const double z0 = init_tilde.z0_gamma[j];
    record("surface_reaction", rep.min_surface_reaction, true, n,
           pot.q11[j] * r + pot.q12[j] * z0 + pot_tilde.q13[j] * g(r, z0));
    record("coupling_floor", rep.min_coupling_floor, true, n,
           std::min(pot.q21[j], pot_tilde.q21[j]) - p0);
  }
  record("admissible", rep.min_admissible, false, -1, pot.R_bound - pot.sup_norm());
  record("admissible", rep.min_admissible, false, -1, pot.R_bound - pot_tilde.sup_norm());
  rep.ok = rep.violations.empty();
  return rep;
}

AssumptionIIReport validate_assumption_II(const Nonlinearity& f, const Nonlinearity& g,
                                          const Trajectory& traj, double theta, double r1) {
  AssumptionIIReport rep;
  const SystemState s = traj.at(theta);  // throws when theta is outside

  rep.min_abs_f = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < s.y.size(); ++i)
    rep.min_abs_f = std::min(rep.min_abs_f, std::abs(f(s.y[i], s.z[i])));
  rep.min_abs_g = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < s.y_gamma.size(); ++j)
    rep.min_abs_g = std::min(rep.min_abs_g, std::abs(g(s.y_gamma[j], s.z_gamma[j])));
  rep.lower_bound_ok = rep.min_abs_f >= r1 && rep.min_abs_g >= r1;

  for (std::size_t n = 0; n < traj.size(); ++n) {
    const SystemState& st = traj.states[n];
    for (Eigen::Index i = 0; i < st.y.size(); ++i) {
      const auto p = f.partials(st.y[i], st.z[i]);
      rep.sampled_partial_bound_f = std::max(rep.sampled_partial_bound_f, std::abs(p[0]) + std::abs(p[1]));
    }
    for (Eigen::Index j = 0; j < st.y_gamma.size(); ++j) {
      const auto p = g.partials(st.y_gamma[j], st.z_gamma[j]);
      rep.sampled_partial_bound_g = std::max(rep.sampled_partial_bound_g, std::abs(p[0]) + std::abs(p[1]));
    }
    if (n > 0 && traj.dt > 0.0) {
      const SystemState& pr = traj.states[n - 1];
      for (Eigen::Index i = 0; i < st.y.size(); ++i)
        rep.max_abs_dt_f = std::max(rep.max_abs_dt_f,
                                    std::abs(f(st.y[i], st.z[i]) - f(pr.y[i], pr.z[i])) / traj.dt);
      for (Eigen::Index j = 0; j < st.y_gamma.size(); ++j)
        rep.max_abs_dt_g = std::max(
            rep.max_abs_dt_g,
            std::abs(g(st.y_gamma[j], st.z_gamma[j]) - g(pr.y_gamma[j], pr.z_gamma[j])) / traj.dt);
    }
  }
  const double tol = 1e-12;
  rep.lipschitz_ok = rep.sampled_partial_bound_f <= f.lipschitz_bound * (1 + tol) + tol &&
                     rep.sampled_partial_bound_g <= g.lipschitz_bound * (1 + tol) + tol;
  rep.ok = rep.lower_bound_ok && rep.lipschitz_ok;
  return rep;
}

}  // namespace bulksurf
