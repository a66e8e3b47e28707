#include "bulksurf/positivity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "bulksurf/errors.hpp"

namespace bulksurf {

QPReport check_qp(const ReactionSet& r, const std::vector<double>& samples) {
  QPReport rep;
  double worst = 0.0;
  auto probe = [&](const Nonlinearity& fn, const char* name, bool first_zero, bool& flag) {
    for (double s : samples) {
      const double u = first_zero ? 0.0 : s;
      const double v = first_zero ? s : 0.0;
      const double val = fn(u, v);
      if (val < 0.0) {
        flag = false;
        if (val < worst) {
          worst = val;
          rep.worst_violation = QPViolation{name, u, v, val};
        }
      }
    }
  };
  probe(r.f1, "f1", true, rep.f1_ok);
  probe(r.g1, "g1", true, rep.g1_ok);
  probe(r.f2, "f2", false, rep.f2_ok);
  probe(r.g2, "g2", false, rep.g2_ok);
  return rep;
}

std::vector<double> qp_samples(double v_max, int n) {
  require(n >= 2 && v_max > 0.0, "qp samples need n >= 2 and v_max > 0");
  std::vector<double> s(n);
  for (int k = 0; k < n; ++k) s[k] = v_max * k / (n - 1);
  return s;
}

double negative_part_energy(const Mesh& mesh, const Field& bulk, const Field& surface) {
  const auto neg = [](const Field& f) { return (-f.array()).max(0.0).square(); };
  return (mesh.cell_areas.array() * neg(bulk)).sum() +
         (mesh.surface_weights.array() * neg(surface)).sum();
}

MonotoneReport negative_part_energy_monotone(const std::vector<double>& energy, double dt,
                                             double scale) {
  MonotoneReport rep;
  rep.tolerance = 1e-8 * scale * scale * dt;
  rep.max_increase = -std::numeric_limits<double>::infinity();
  for (std::size_t n = 0; n + 1 < energy.size(); ++n) {
    const double inc = energy[n + 1] - energy[n];
    if (inc > rep.max_increase) {
      rep.max_increase = inc;
      rep.worst_step = static_cast<int>(n);
    }
  }
  if (energy.size() < 2) rep.max_increase = 0.0;
  rep.ok = rep.max_increase <= rep.tolerance;
  return rep;
}

std::vector<EnergyPoint> energy_series(const Mesh& mesh, const Trajectory& traj) {
  std::vector<EnergyPoint> out;
  out.reserve(traj.size());
  for (const SystemState& s : traj.states)
    out.push_back({s.t, negative_part_energy(mesh, s.y, s.y_gamma),
                   negative_part_energy(mesh, s.z, s.z_gamma), s.min_value()});
  return out;
}

PositivityReport run_reaction_system(const Mesh& mesh, const DiffusionSpec& diffusion,
                                     const ReactionSet& reactions, const InitialData& init,
                                     double T_end, double dt) {
  init.validate(mesh);
  const PotentialSet none = PotentialSet::zeros(mesh);
  TermList terms{std::make_shared<ClippedReactionTerms>(reactions.f1, reactions.f2, reactions.g1,
                                                        reactions.g2)};
  const ImexStepper stepper(mesh, diffusion, none, terms, dt);
  const SystemState x0 = init.to_state(0.0);
  const Trajectory traj = stepper.solve(x0, T_end);

  PositivityReport rep;
  rep.scale = std::max(x0.max_abs(), 1e-300);
  rep.max_offdiagonal = stepper.max_offdiagonal();
  rep.series = energy_series(mesh, traj);
  rep.min_value = std::numeric_limits<double>::infinity();
  std::vector<double> ey, ez;
  for (const EnergyPoint& p : rep.series) {
    rep.min_value = std::min(rep.min_value, p.min_value);
    ey.push_back(p.energy);
    ez.push_back(p.energy_z);
  }
  rep.nonnegative = rep.min_value >= -1e-10 * rep.scale;
  rep.monotone = negative_part_energy_monotone(ey, dt, rep.scale);
  rep.monotone_z = negative_part_energy_monotone(ez, dt, rep.scale);
  return rep;
}

PositivityReport positivity_experiment(const Mesh& mesh, const DiffusionSpec& diffusion,
                                       const ReactionSet& reactions, const InitialData& init,
                                       double T_end, double dt,
                                       const std::vector<double>& samples) {
  const QPReport qp = check_qp(reactions, samples);
  if (!qp.ok()) {
    const QPViolation& w = *qp.worst_violation;
    throw ValidationError("reactions are not quasi-positive: " + w.function + "(" +
                          std::to_string(w.u) + ", " + std::to_string(w.v) +
                          ") = " + std::to_string(w.value));
  }
  init.validate(mesh);
  for (const Field* f : {&init.y0, &init.z0, &init.y0_gamma, &init.z0_gamma})
    require(f->minCoeff() >= 0.0, "positivity experiment needs componentwise nonnegative data");
  return run_reaction_system(mesh, diffusion, reactions, init, T_end, dt);
}

ReactionSet make_qp_family(const std::vector<double>& c) {
  require(c.size() == 11, "qp family needs 11 coefficients");
  for (double v : c) require(v >= 0.0, "qp family coefficients must be nonnegative");
  // uv/(1+u+v) has partials in [0, 1] for u, v >= 0.
  auto sat = [](double u, double v) { return u * v / (1.0 + u + v); };
  auto sat_d = [](double u, double v) -> std::array<double, 2> {
    const double q = (1.0 + u + v) * (1.0 + u + v);
    return {v * (1.0 + v) / q, u * (1.0 + u) / q};
  };
  ReactionSet r;
  r.f1 = make_custom_nonlinearity(
      "f1", [=](double u, double v) { return c[0] * v - c[1] * u + c[2] * sat(u, v); },
      [=](double u, double v) -> std::array<double, 2> {
        const auto d = sat_d(u, v);
        return {-c[1] + c[2] * d[0], c[0] + c[2] * d[1]};
      },
      c[0] + c[1] + 2.0 * c[2]);
  r.f2 = make_custom_nonlinearity(
      "f2", [=](double u, double v) { return c[3] * u - c[4] * v - c[5] * sat(u, v); },
      [=](double u, double v) -> std::array<double, 2> {
        const auto d = sat_d(u, v);
        return {c[3] - c[5] * d[0], -c[4] - c[5] * d[1]};
      },
      c[3] + c[4] + 2.0 * c[5]);
  r.g1 = make_custom_nonlinearity(
      "g1", [=](double u, double v) { return c[6] * v - c[7] * u; },
      [=](double, double) -> std::array<double, 2> { return {-c[7], c[6]}; }, c[6] + c[7]);
  r.g2 = make_custom_nonlinearity(
      "g2", [=](double u, double v) { return c[8] * u - c[9] * v + c[10]; },
      [=](double, double) -> std::array<double, 2> { return {c[8], -c[9]}; }, c[8] + c[9]);
  return r;
}

void write_energy_csv(std::ostream& os, const std::vector<EnergyPoint>& series) {
  char buf[128];
  os << "t,E_minus,E_minus_z,min\n";
  for (const EnergyPoint& p : series) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g\n", p.t, p.energy, p.energy_z,
                  p.min_value);
    os << buf;
  }
}

}  // namespace bulksurf
