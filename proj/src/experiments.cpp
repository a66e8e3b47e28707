#include "bulksurf/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "bulksurf/carleman.hpp"
#include "bulksurf/errors.hpp"
#include "bulksurf/positivity.hpp"

namespace bulksurf {

namespace fs = std::filesystem;
using nlohmann::json;

Check Check::at_most(std::string name, double value, double limit) {
  return {std::move(name), value, limit, "<=", value <= limit};
}

Check Check::at_least(std::string name, double value, double limit) {
  return {std::move(name), value, limit, ">=", value >= limit};
}

Check Check::holds(std::string name, bool ok) {
  return {std::move(name), ok ? 1.0 : 0.0, 1.0, "==", ok};
}

bool ExperimentOutcome::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

ResultDir::ResultDir(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

void ResultDir::write(const std::string& name, const std::string& content) {
  const fs::path target = dir_ / name;
  const fs::path tmp = dir_ / (name + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw NumericalError("cannot write " + tmp.string());
    os << content;
    if (!os) throw NumericalError("cannot write " + tmp.string());
  }
  fs::rename(tmp, target);
}

void ResultDir::csv(const std::string& name, const std::string& description,
                    const std::string& content) {
  const std::string header = content.substr(0, content.find('\n'));
  json cols = json::array();
  std::stringstream ss(header);
  for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
  schema_[name] = {{"description", description}, {"columns", cols}};
  write(name, content);
}

void ResultDir::series(const std::string& name, const std::string& x_label,
                       const std::string& y_label, const std::vector<double>& x,
                       const std::vector<double>& y) {
  std::string out = x_label + "," + y_label + "\n";
  for (std::size_t i = 0; i < x.size(); ++i)
    out += format_double(x[i]) + "," + format_double(y[i]) + "\n";
  csv("series_" + name + ".csv", "plot series: " + y_label + " against " + x_label, out);
}

void ResultDir::write_schema() { write("schema.json", schema_.dump(2) + "\n"); }

namespace {

template <class Fn>
std::string to_string_with(Fn&& fn) {
  std::ostringstream os;
  fn(os);
  return os.str();
}

ImexStepper reference_stepper(const ModelSetup& m, const PotentialSet& pot) {
  return ImexStepper(m.mesh, m.diffusion, pot,
                     {std::make_shared<SemilinearTerms>(pot.p13, pot.q13, m.f, m.g)}, m.dt);
}

bool all_zero(const PotentialSet& p) {
  for (const Field* f : {&p.p11, &p.p12, &p.p13, &p.p21, &p.p22, &p.q11, &p.q12, &p.q13, &p.q21,
                         &p.q22})
    if (f->size() > 0 && f->cwiseAbs().maxCoeff() != 0.0) return false;
  return true;
}

json effective_values(const RunConfig& cfg) {
  const CarlemanConfig k = cfg.carleman_config();
  return {{"s1", k.default_s1()},
          {"lambda1", k.lambda1},
          {"epsilon", k.epsilon},
          {"dt", cfg.dt},
          {"T", cfg.T},
          {"n_steps", cfg.n_steps()},
          {"tolerances",
           {{"mass_per_step", cfg.simulate.mass_tolerance},
            {"positivity_min", cfg.positivity.min_tolerance},
            {"conormal_identity_residual", cfg.carleman.spd_tolerance},
            {"decomposition_residual", cfg.carleman.decomposition_tolerance},
            {"ratio_growth", cfg.carleman.growth_limit},
            {"gradient_relative", cfg.gradcheck.tolerance},
            {"reconstruction_error", cfg.inverse.error_tolerance},
            {"stability_spread", cfg.stability.spread_limit},
            {"linear_response", cfg.stability.linear_tolerance},
            {"midtime", cfg.stability.midtime_constant * (cfg.dt + cfg.stability.scale *
                                                                       cfg.stability.scale)}}}};
}

// ---------------------------------------------------------------------------

ExperimentOutcome run_simulate(const RunConfig& cfg, ResultDir& out) {
  const ModelSetup m = cfg.model();
  const ImexStepper stepper = reference_stepper(m, m.potentials);
  const Trajectory traj = stepper.solve_steps(m.init.to_state(0.0), m.n_steps);

  ExperimentOutcome r;
  bool finite = true;
  std::vector<double> t, mass, mins, norms;
  double max_drift = 0.0;
  for (std::size_t n = 0; n < traj.size(); ++n) {
    const SystemState& s = traj.states[n];
    finite = finite && s.is_finite();
    t.push_back(s.t);
    mass.push_back(total_mass(m.mesh, s));
    mins.push_back(s.min_value());
    norms.push_back(state_norm(m.mesh, s));
    if (n > 0)
      max_drift = std::max(max_drift, std::abs(mass[n] - mass[n - 1]) /
                                          std::max(std::abs(mass[n - 1]), 1e-300));
  }
  r.checks.push_back(Check::holds("finite_trajectory", finite));
  const bool conservative = all_zero(m.potentials);
  if (conservative)
    r.checks.push_back(
        Check::at_most("mass_drift_per_step", max_drift, cfg.simulate.mass_tolerance));

  out.csv("trajectory_summary.csv", "per time step: total mass, minimum, L2 norm",
          to_string_with([&](std::ostream& os) {
            os << "step,t,mass,min,norm\n";
            for (std::size_t n = 0; n < t.size(); ++n)
              os << n << ',' << format_double(t[n]) << ',' << format_double(mass[n]) << ','
                 << format_double(mins[n]) << ',' << format_double(norms[n]) << '\n';
          }));
  out.series("mass", "t", "mass", t, mass);
  out.series("min", "t", "min", t, mins);
  out.series("norm", "t", "norm", t, norms);
  if (cfg.simulate.write_trajectory)
    out.csv("trajectory.csv", "long-format trajectory",
            to_string_with([&](std::ostream& os) { write_trajectory_csv(os, traj); }));
  if (cfg.simulate.write_checkpoint) {
    const fs::path tmp = out.path() / "trajectory.bin.tmp";
    write_trajectory_binary(tmp.string(), traj);
    fs::rename(tmp, out.path() / "trajectory.bin");
  }

  const AssumptionIReport a1 = validate_assumption_I(m.potentials, m.potentials, m.f, m.g, m.init,
                                                     m.r_floor, cfg.p0);
  json assumptions = {{"assumption_I", {{"ok", a1.ok},
                                        {"violations", a1.violations.size()},
                                        {"min_coupling_floor", a1.min_coupling_floor}}}};
  if (traj.states.back().t >= m.regions.theta) {
    const AssumptionIIReport a2 =
        validate_assumption_II(m.f, m.g, traj, m.regions.theta, m.r1);
    assumptions["assumption_II"] = {{"ok", a2.ok},
                                    {"min_abs_f", a2.min_abs_f},
                                    {"min_abs_g", a2.min_abs_g},
                                    {"lipschitz_ok", a2.lipschitz_ok}};
  }
  r.summary = {{"steps", m.n_steps},
               {"dt_max", stepper.dt_max()},
               {"conservative", conservative},
               {"max_relative_mass_drift_per_step", max_drift},
               {"final_min", mins.back()},
               {"final_norm", norms.back()},
               {"assumptions", assumptions}};
  return r;
}

// ---------------------------------------------------------------------------

ExperimentOutcome run_positivity(const RunConfig& cfg, ResultDir& out) {
  const PositivitySettings& ps = cfg.positivity;
  const Mesh mesh = cfg.mesh();
  const DiffusionSpec diffusion = cfg.diffusion(mesh);
  // QP is checked on a range covering every value the clipped solution can reach.
  const std::vector<double> samples = qp_samples(4.0 * ps.data_max, ps.qp_samples);

  ExperimentOutcome r;
  std::string draws = "draw,min_value,scale,nonnegative,max_increase,increase_tolerance,"
                      "monotone,max_increase_z,max_offdiagonal\n";
  std::string energy = "draw,t,E_minus,E_minus_z,min\n";
  std::vector<double> idx, mins;
  double worst_min = std::numeric_limits<double>::infinity(), worst_increase = -1e300,
         worst_offdiag = -1e300;
  int n_nonneg = 0, n_monotone = 0;
  for (int d = 0; d < ps.draws; ++d) {
    std::mt19937_64 rng(cfg.seed * 1000003ULL + static_cast<std::uint64_t>(d));
    std::uniform_real_distribution<double> coef(0.0, ps.coefficient_max);
    std::vector<double> c(11);
    for (double& v : c) v = coef(rng);
    const ReactionSet reactions = make_qp_family(c);
    // Nonnegative data that vanishes on part of the domain, so the clipped
    // reactions are exercised at the boundary of the positive cone.
    std::uniform_real_distribution<double> val(-0.5, 1.0);
    auto draw_field = [&](int n) {
      Field f(n);
      for (int i = 0; i < n; ++i) f[i] = std::max(0.0, val(rng)) * ps.data_max;
      return f;
    };
    InitialData init;
    init.y0 = draw_field(mesh.n_bulk());
    init.z0 = draw_field(mesh.n_bulk());
    init.y0_gamma = draw_field(mesh.n_surface());
    init.z0_gamma = draw_field(mesh.n_surface());
    const PositivityReport rep =
        positivity_experiment(mesh, diffusion, reactions, init, ps.T, ps.dt, samples);
    const bool nonneg = rep.min_value >= -ps.min_tolerance * rep.scale;
    n_nonneg += nonneg;
    n_monotone += rep.monotone.ok;
    worst_min = std::min(worst_min, rep.min_value / rep.scale);
    worst_increase = std::max(worst_increase, rep.monotone.max_increase);
    worst_offdiag = std::max(worst_offdiag, rep.max_offdiagonal);
    draws += std::to_string(d) + "," + format_double(rep.min_value) + "," +
             format_double(rep.scale) + "," + (nonneg ? "1" : "0") + "," +
             format_double(rep.monotone.max_increase) + "," +
             format_double(rep.monotone.tolerance) + "," + (rep.monotone.ok ? "1" : "0") + "," +
             format_double(rep.monotone_z.max_increase) + "," +
             format_double(rep.max_offdiagonal) + "\n";
    for (const EnergyPoint& p : rep.series)
      energy += std::to_string(d) + "," + format_double(p.t) + "," + format_double(p.energy) +
                "," + format_double(p.energy_z) + "," + format_double(p.min_value) + "\n";
    idx.push_back(d);
    mins.push_back(rep.min_value);
  }
  r.checks.push_back(Check::at_least("draws", ps.draws, 20));
  r.checks.push_back(Check::at_least("nonnegative_draws", n_nonneg, ps.draws));
  r.checks.push_back(Check::at_least("monotone_draws", n_monotone, ps.draws));
  r.checks.push_back(Check::at_most("max_offdiagonal", worst_offdiag, 0.0));
  out.csv("draws.csv", "one row per randomized (QP) draw", draws);
  out.csv("energy.csv", "negative-part energy per draw and time step", energy);
  out.series("min_value", "draw", "min_value", idx, mins);
  r.summary = {{"draws", ps.draws},
               {"worst_relative_min", worst_min},
               {"worst_energy_increase", worst_increase},
               {"max_offdiagonal", worst_offdiag},
               {"qp_sample_range", 4.0 * ps.data_max}};
  return r;
}

// ---------------------------------------------------------------------------

AnalyticField jet_field(const FieldSpec& f) {
  const double c0 = f.c0, c1 = f.c1, c2 = f.c2;
  if (f.type == "constant") return [c0](const JetPoint&) { return Jet(c0); };
  if (f.type == "linear")
    return [=](const JetPoint& p) { return Jet(c0) + c1 * p.x1 + c2 * p.x2; };
  if (f.type == "radial")
    return [=](const JetPoint& p) { return Jet(c0) + c2 * (p.x1 * p.x1 + p.x2 * p.x2); };
  throw ValidationError(f.key + ": the analytic Carleman checks need a constant, linear or radial field");
}

struct CarlemanContext {
  Mesh mesh;
  RegionSet regions;
  CarlemanConfig base;
  std::vector<double> times;
  double s1 = 0.0;
};

CarlemanContext carleman_context(const RunConfig& cfg) {
  CarlemanContext c;
  c.mesh = cfg.mesh();
  c.regions = cfg.regions(c.mesh);
  c.base = cfg.carleman_config();
  c.times = interior_times(cfg.t0, cfg.t1, cfg.carleman.time_intervals);
  c.s1 = c.base.default_s1();
  return c;
}

using Evaluate = std::function<RatioResult(const CarlemanConfig&)>;

// Sweeps lambda and s for one field; appends rows.
void sweep(const RunConfig& cfg, const CarlemanContext& ctx, const std::string& field,
           const std::string& estimate, const std::vector<double>& taus, const Evaluate& eval,
           std::vector<SweepRow>& rows) {
  for (double tau : taus)
    for (double lam : cfg.carleman.lambdas)
      for (double mult : cfg.carleman.s_multipliers) {
        CarlemanConfig k = ctx.base;
        k.lambda = lam;
        k.s = mult * ctx.s1;
        k.tau = tau;
        rows.push_back({field, estimate, eval(k)});
      }
}

void report_sweep(const RunConfig& cfg, const CarlemanContext& ctx,
                  const std::vector<SweepRow>& rows, const std::string& prefix, ResultDir& out,
                  ExperimentOutcome& r) {
  out.csv(prefix + "_sweep.csv", "weighted-norm ratio per (tau, s, lambda, field)",
          to_string_with([&](std::ostream& os) { write_sweep_csv(os, rows); }));
  const std::vector<GrowthSummary> growth = ratio_growth(rows);
  double worst = 0.0;
  bool finite = true;
  json g = json::array();
  std::string table = "field,estimate,lambda,tau,growth\n";
  for (const GrowthSummary& s : growth) {
    worst = std::max(worst, s.growth);
    finite = finite && std::isfinite(s.growth);
    table += s.field + "," + s.estimate + "," + format_double(s.lambda) + "," +
             format_double(s.tau) + "," + format_double(s.growth) + "\n";
  }
  for (const SweepRow& row : rows)
    finite = finite && std::isfinite(row.result.ratio) && !row.result.indeterminate;
  out.csv(prefix + "_growth.csv", "max ratio over the s sweep relative to the ratio at s1", table);

  // One plot series per field at lambda1 and the first tau.
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> by_field;
  const double tau0 = rows.front().result.tau;
  for (const SweepRow& row : rows)
    if (row.result.lambda == cfg.carleman.lambdas.front() && row.result.tau == tau0) {
      by_field[row.field].first.push_back(row.result.s / ctx.s1);
      by_field[row.field].second.push_back(row.result.ratio);
    }
  for (const auto& [field, xy] : by_field)
    out.series(prefix + "_ratio_" + field, "s_over_s1", "ratio", xy.first, xy.second);

  r.checks.push_back(Check::holds(prefix + "_ratios_finite", finite));
  r.checks.push_back(Check::at_most(prefix + "_max_growth", worst, cfg.carleman.growth_limit));
  r.summary[prefix + "_max_growth"] = worst;
  r.summary[prefix + "_rows"] = rows.size();
}

struct DiscreteFamily {
  std::vector<std::pair<std::string, SampledField>> y, z;
  PotentialSet potentials;
};

// Trajectories of the configured model, with and without the semilinear term.
DiscreteFamily discrete_family(const RunConfig& cfg, const RegionSet& regions) {
  const ModelSetup m = cfg.model();
  DiscreteFamily fam;
  fam.potentials = m.potentials;
  PotentialSet linear = m.potentials;
  linear.p13.setZero();
  linear.q13.setZero();
  for (const auto& [name, pot] : {std::pair{std::string("reference"), m.potentials},
                                  std::pair{std::string("linear"), linear}}) {
    const ImexStepper stepper = reference_stepper(m, pot);
    const Trajectory traj = stepper.solve_steps(m.init.to_state(0.0), m.n_steps);
    fam.y.emplace_back("discrete_y_" + name, sample_discrete(m.mesh, regions, traj, 0, stepper));
    fam.z.emplace_back("discrete_z_" + name, sample_discrete(m.mesh, regions, traj, 1, stepper));
  }
  return fam;
}

ExperimentOutcome run_carleman_verify(const RunConfig& cfg, ResultDir& out) {
  const CarlemanContext ctx = carleman_context(cfg);
  const CarlemanSettings& cs = cfg.carleman;
  ExperimentOutcome r;

  // Pointwise conormal identity on random SPD matrices.
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> nd;
  double spd_max = 0.0;
  for (int i = 0; i < cs.spd_samples; ++i) {
    Eigen::Matrix2d B;
    B << nd(rng), nd(rng), nd(rng), nd(rng);
    const Eigen::Matrix2d A = B * B.transpose() + 0.1 * Eigen::Matrix2d::Identity();
    const double phi = std::uniform_real_distribution<double>(0.0, 2.0 * M_PI)(rng);
    const Eigen::Vector2d nu(std::cos(phi), std::sin(phi));
    const Eigen::Vector2d grad(nd(rng), nd(rng));
    spd_max = std::max(spd_max, conormal_identity_residual(A, nu, grad));
  }
  r.checks.push_back(Check::at_most("conormal_identity_residual", spd_max, cs.spd_tolerance));

  const Field a2 = cfg.a2.sample_bulk(ctx.mesh);
  const ConormalBoundReport cb =
      conormal_weight_bound(boundary_values(ctx.mesh, a2), -2.0, cfg.beta, ctx.base.c_floor);
  r.checks.push_back(Check::holds("conormal_bound", cb.ok));
  const SigmaReport sg = sigma_bounds(ctx.mesh, a2, cfg.beta);
  r.checks.push_back(Check::holds("sigma_bounds", sg.ok));

  // Weight identities and properties on the sampled cylinder.
  std::vector<Point> points;
  for (int c = 0; c < ctx.mesh.n_bulk(); ++c) points.push_back(ctx.mesh.cell_center(c));
  for (int j = 0; j < ctx.mesh.n_surface(); ++j) points.push_back(ctx.mesh.surface_point(j));
  std::string wtable =
      "lambda,sup_dalpha_over_xi2,sup_dxi_over_xi2,inf_xi_scaled,sup_b_quotient,sup_c_quotient,"
      "sup_d_quotient,sum_identity_defect,gradient_identity_defect,dalpha_fd_defect,"
      "max_log10_endpoint_weight,ok\n";
  double inf_xi = std::numeric_limits<double>::infinity();
  bool weights_ok = true;
  for (double lam : cs.lambdas) {
    CarlemanConfig k = ctx.base;
    k.lambda = lam;
    const WeightPropertyReport w =
        weight_property_margins(k, ctx.times, points, (cfg.t1 - cfg.t0) / cs.time_intervals);
    inf_xi = std::min(inf_xi, w.inf_xi_scaled);
    weights_ok = weights_ok && w.ok;
    for (double v : {lam, w.sup_dalpha_over_xi2, w.sup_dxi_over_xi2, w.inf_xi_scaled,
                     w.sup_b_quotient, w.sup_c_quotient, w.sup_d_quotient,
                     w.max_sum_identity_defect, w.max_gradient_identity_defect,
                     w.max_dalpha_fd_defect, w.max_log10_endpoint_weight})
      wtable += format_double(v) + ",";
    wtable += w.ok ? "1\n" : "0\n";
  }
  out.csv("weight_properties.csv", "weight identities and property margins per lambda", wtable);
  r.checks.push_back(Check::holds("weight_properties", weights_ok));
  r.checks.push_back(Check::at_least("inf_xi_scaled", inf_xi, 1.0 - 1e-12));

  // Decomposition identities on the analytic family.
  const AnalyticField ja = jet_field(cfg.a2), jd = jet_field(cfg.d2);
  const auto family = analytic_test_family(cfg.t0, cfg.t1);
  double dec_max = 0.0;
  std::string dtable = "field,tau,residual_M,residual_N\n";
  for (const auto& [name, z] : family)
    for (double tau : cs.taus) {
      const Decomposition d = mn_decomposition(tau, ctx.mesh, z, ja, jd, ctx.base, ctx.times);
      dec_max = std::max({dec_max, d.residual_M, d.residual_N});
      dtable += name + "," + format_double(tau) + "," + format_double(d.residual_M) + "," +
                format_double(d.residual_N) + "\n";
    }
  out.csv("decomposition.csv", "relative residuals of the M and N decompositions", dtable);
  r.checks.push_back(
      Check::at_most("decomposition_residual", dec_max, cs.decomposition_tolerance));

  // Ratio sweep: analytic family plus discrete solutions.
  std::vector<SweepRow> rows;
  for (const auto& [name, z] : family) {
    const SampledField f = sample_analytic(ctx.mesh, ctx.regions, z, ja, jd, ctx.times);
    sweep(cfg, ctx, name, "carleman", cs.taus,
          [&](const CarlemanConfig& k) { return carleman_ratio(k.tau, f, k); }, rows);
  }
  const DiscreteFamily fam = discrete_family(cfg, ctx.regions);
  for (const auto* group : {&fam.y, &fam.z})
    for (const auto& [name, f] : *group)
      sweep(cfg, ctx, name, "carleman", cs.taus,
            [&](const CarlemanConfig& k) { return carleman_ratio(k.tau, f, k); }, rows);
  report_sweep(cfg, ctx, rows, "carleman", out, r);

  r.summary["conormal_identity_max_residual"] = spd_max;
  r.summary["decomposition_max_residual"] = dec_max;
  r.summary["inf_xi_scaled"] = inf_xi;
  r.summary["sigma_min_lower_margin"] = sg.min_lower_margin;
  r.summary["conormal_min_margin"] = cb.min_margin;
  return r;
}

ExperimentOutcome run_shifted_verify(const RunConfig& cfg, ResultDir& out) {
  const CarlemanContext ctx = carleman_context(cfg);
  ExperimentOutcome r;
  const PotentialSet pot = cfg.potentials(ctx.mesh);
  require(pot.p0 > 0.0, "potentials.p0: the shifted estimate needs p0 > 0");
  require(pot.p21.minCoeff() >= pot.p0, "potentials.p21: p21 below p0 floor: Assumption I");
  require(pot.q21.minCoeff() >= pot.p0, "potentials.q21: q21 below p0 floor: Assumption I");

  const AnalyticField ja1 = jet_field(cfg.a1), jd1 = jet_field(cfg.d1);
  const AnalyticField ja2 = jet_field(cfg.a2), jd2 = jet_field(cfg.d2);
  const auto family = analytic_test_family(cfg.t0, cfg.t1);
  const std::vector<double> tau0 = {0.0};  // the shifted estimate fixes its own powers
  std::vector<SweepRow> rows;
  for (std::size_t k = 0; k < family.size(); ++k) {
    const auto& [ny, fy] = family[k];
    const auto& [nz, fz] = family[(k + 1) % family.size()];
    const SampledField y = sample_analytic(ctx.mesh, ctx.regions, fy, ja1, jd1, ctx.times);
    const SampledField z = sample_analytic(ctx.mesh, ctx.regions, fz, ja2, jd2, ctx.times);
    sweep(cfg, ctx, ny + "+" + nz, "shifted", tau0,
          [&](const CarlemanConfig& c) { return shifted_ratio(y, z, pot, c); }, rows);
  }
  const DiscreteFamily fam = discrete_family(cfg, ctx.regions);
  for (std::size_t k = 0; k < fam.y.size(); ++k) {
    const SampledField& y = fam.y[k].second;
    const SampledField& z = fam.z[k].second;
    sweep(cfg, ctx, fam.z[k].first.substr(std::string("discrete_z_").size()) + "_pair",
          "shifted", tau0, [&](const CarlemanConfig& c) { return shifted_ratio(y, z, pot, c); },
          rows);
  }
  report_sweep(cfg, ctx, rows, "shifted", out, r);
  return r;
}

// ---------------------------------------------------------------------------

ExperimentOutcome run_gradcheck(const RunConfig& cfg, ResultDir& out) {
  InverseSetup setup = cfg.inverse_setup();
  const CoefficientVector truth = cfg.truth(setup);
  const ObservationRecord obs = simulate_twin(setup, truth, cfg.inverse.noise_level, cfg.seed);
  // Every block is differentiated, not only the configured unknowns.
  setup.active = {true, true, true, true};
  const GradcheckSettings& g = cfg.gradcheck;
  const GradientCheckReport rep = gradient_check(setup, truth, obs, g.points, g.directions, g.h,
                                                 g.spread, cfg.seed, cfg.threads);
  ExperimentOutcome r;
  std::string table = "point,direction,finite_difference,adjoint,relative_error\n";
  std::vector<double> x, y;
  for (const GradientCheckRow& row : rep.rows) {
    table += std::to_string(row.point) + "," + std::to_string(row.direction) + "," +
             format_double(row.finite_difference) + "," + format_double(row.adjoint) + "," +
             format_double(row.relative_error) + "\n";
    x.push_back(static_cast<double>(x.size()));
    y.push_back(row.relative_error);
  }
  out.csv("gradcheck.csv", "central differences against the adjoint gradient", table);
  out.series("gradcheck_relative_error", "row", "relative_error", x, y);
  r.checks.push_back(Check::at_least("rows", static_cast<double>(rep.rows.size()),
                                     static_cast<double>(g.points * g.directions)));
  r.checks.push_back(Check::at_most("max_relative_error", rep.max_relative_error, g.tolerance));
  r.summary = {{"h", rep.h}, {"points", g.points}, {"directions", g.directions},
               {"max_relative_error", rep.max_relative_error}};
  return r;
}

ExperimentOutcome run_reconstruct(const RunConfig& cfg, ResultDir& out) {
  const InverseSetup setup = cfg.inverse_setup();
  const CoefficientVector truth = cfg.truth(setup);
  const CoefficientVector initial = cfg.initial_guess(setup);
  const ObservationRecord obs = simulate_twin(setup, truth, cfg.inverse.noise_level, cfg.seed);
  OptimizerConfig opt = cfg.inverse.optimizer;
  opt.threads = cfg.threads;

  const ReconstructionResult res = reconstruct(setup, obs, initial, opt);
  const double err = relative_coefficient_error(setup, res.coeffs, truth);
  const double err0 = relative_coefficient_error(setup, initial, truth);

  ExperimentOutcome r;
  out.csv("history.csv", "optimizer iterations",
          to_string_with([&](std::ostream& os) { write_history_csv(os, res.history); }));
  out.csv("coefficients.csv", "reconstructed patch/arc values",
          to_string_with([&](std::ostream& os) { write_coefficients_csv(os, res.coeffs); }));
  out.csv("truth.csv", "true patch/arc values",
          to_string_with([&](std::ostream& os) { write_coefficients_csv(os, truth); }));
  std::vector<double> it, obj, pg;
  bool monotone = true;
  for (std::size_t k = 0; k < res.history.size(); ++k) {
    it.push_back(res.history[k].iter);
    obj.push_back(res.history[k].objective);
    pg.push_back(res.history[k].projected_gradient);
    if (k > 0 && obj[k] > obj[k - 1]) monotone = false;
  }
  out.series("objective", "iteration", "objective", it, obj);
  out.series("projected_gradient", "iteration", "projected_gradient", it, pg);
  const int iterations = res.history.empty() ? 0 : res.history.back().iter;

  if (!cfg.inverse.reg_sweep.empty()) {
    std::string lc = "reg_weight,residual_norm,penalty_norm,relative_error,iterations\n";
    std::vector<double> xs, ys;
    for (double w : cfg.inverse.reg_sweep) {
      InverseSetup s = setup;
      s.reg_weight = w;
      const ReconstructionResult rr = reconstruct(s, obs, initial, opt);
      InverseSetup plain = s;
      plain.reg_weight = 0.0;
      const double residual = std::sqrt(2.0 * objective(plain, rr.coeffs, obs));
      const Field mask = s.active.mask(rr.coeffs);
      const double penalty =
          (rr.coeffs.pack() - s.prior.pack()).cwiseProduct(mask).norm();
      lc += format_double(w) + "," + format_double(residual) + "," + format_double(penalty) +
            "," + format_double(relative_coefficient_error(s, rr.coeffs, truth)) + "," +
            std::to_string(rr.history.empty() ? 0 : rr.history.back().iter) + "\n";
      xs.push_back(residual);
      ys.push_back(penalty);
    }
    out.csv("lcurve.csv", "regularization sweep", lc);
    out.series("lcurve", "residual_norm", "penalty_norm", xs, ys);
  }

  r.checks.push_back(Check::at_most("relative_l2_error", err, cfg.inverse.error_tolerance));
  r.checks.push_back(Check::at_most("iterations", iterations, opt.max_iter));
  r.checks.push_back(Check::holds("objective_nonincreasing", monotone));
  r.summary = {{"initial_relative_error", err0},
               {"relative_error", err},
               {"iterations", iterations},
               {"converged", res.converged},
               {"line_search_failed", res.line_search_failed},
               {"stop_reason", res.stop_reason},
               {"final_objective", obj.empty() ? 0.0 : obj.back()},
               {"noise_level", cfg.inverse.noise_level},
               {"reg_weight", cfg.inverse.reg_weight},
               {"unknowns", cfg.inverse.unknowns}};
  return r;
}

ExperimentOutcome run_stability(const RunConfig& cfg, ResultDir& out) {
  const ModelSetup m = cfg.model();
  const StabilitySettings& ss = cfg.stability;
  StabilityConfig sc;
  sc.n_draws = ss.draws;
  sc.scale = ss.scale;
  sc.mode = ss.mode;
  sc.seed = cfg.seed;
  sc.damping_cap = ss.damping_cap;
  sc.threads = cfg.threads;
  const StabilityReport rep = stability_ensemble(m, sc);

  ExperimentOutcome r;
  out.csv("stability.csv", "one row per admissible perturbation",
          to_string_with([&](std::ostream& os) { write_stability_csv(os, rep); }));
  std::vector<double> d, ratio, mid;
  for (const StabilityRecord& rec : rep.records) {
    d.push_back(rec.draw);
    ratio.push_back(rec.ratio);
    mid.push_back(std::max(rec.midtime.y, rec.midtime.z));
  }
  out.series("ratio", "draw", "ratio", d, ratio);
  out.series("midtime_error", "draw", "midtime_error", d, mid);

  const double mid_limit = ss.midtime_constant * (cfg.dt + ss.scale * ss.scale);
  r.checks.push_back(Check::at_least("draws", static_cast<double>(rep.records.size()), 20));
  r.checks.push_back(Check::at_most("midtime_identity_error", rep.max_midtime_error, mid_limit));
  r.checks.push_back(Check::at_most("linear_response_deviation",
                                    rep.max_linear_response_deviation, ss.linear_tolerance));
  r.checks.push_back(Check::at_most("ratio_spread", rep.spread, ss.spread_limit));
  r.summary = {{"mode", ss.mode == StabilityMode::forward_from_theta ? "forward_from_theta"
                                                                     : "full_window_regularized"},
               {"experimental", rep.experimental},
               {"measurement", rep.measurement},
               {"theta", rep.theta},
               {"scale", rep.scale},
               {"rejected", rep.rejected},
               {"kept_modes", rep.kept_modes},
               {"max_ratio", rep.max_ratio},
               {"median_ratio", rep.median_ratio},
               {"spread", rep.spread},
               {"max_midtime_error", rep.max_midtime_error},
               {"max_midtime_error_including_boundary_layer", rep.max_midtime_error_full},
               {"max_linear_response_deviation", rep.max_linear_response_deviation}};
  return r;
}

using Runner = ExperimentOutcome (*)(const RunConfig&, ResultDir&);

const std::vector<std::pair<std::string, Runner>>& runners() {
  static const std::vector<std::pair<std::string, Runner>> r = {
      {"simulate", run_simulate},
      {"positivity", run_positivity},
      {"carleman-verify", run_carleman_verify},
      {"shifted-verify", run_shifted_verify},
      {"gradcheck", run_gradcheck},
      {"reconstruct", run_reconstruct},
      {"stability", run_stability}};
  return r;
}

json check_json(const Check& c) {
  return {{"name", c.name}, {"value", c.value}, {"relation", c.relation},
          {"limit", c.limit}, {"pass", c.pass}};
}

}  // namespace

const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& [name, fn] : runners()) n.push_back(name);
    return n;
  }();
  return names;
}

ExperimentOutcome run_experiment(const std::string& subcommand, const RunConfig& cfg,
                                 ResultDir& out) {
  for (const auto& [name, fn] : runners())
    if (name == subcommand) return fn(cfg, out);
  throw ValidationError("unknown subcommand '" + subcommand + "'");
}

int run_and_report(const std::string& subcommand, const RunConfig& cfg, const fs::path& out_dir,
                   std::ostream& log) {
  ResultDir out(out_dir);
  out.write("config.json", cfg.to_json().dump(2) + "\n");
  json summary = {{"subcommand", subcommand}, {"seed", cfg.seed}, {"threads", cfg.threads}};
  int status = 0;
  try {
    summary["effective"] = effective_values(cfg);
    const ExperimentOutcome res = run_experiment(subcommand, cfg, out);
    json checks = json::array();
    for (const Check& c : res.checks) {
      checks.push_back(check_json(c));
      log << (c.pass ? "PASS " : "FAIL ") << c.name << ": " << format_double(c.value) << ' '
          << c.relation << ' ' << format_double(c.limit) << '\n';
    }
    summary["checks"] = checks;
    summary["results"] = res.summary;
    status = res.passed() ? 0 : 3;
    summary["status"] = status == 0 ? "pass" : "fail";
  } catch (const ValidationError& e) {
    log << "validation error: " << e.what() << '\n';
    summary["status"] = "validation_error";
    summary["error"] = e.what();
    status = 1;
  } catch (const std::exception& e) {
    log << "numerical error: " << e.what() << '\n';
    summary["status"] = "numerical_error";
    summary["error"] = e.what();
    status = 2;
  }
  out.write("summary.json", summary.dump(2) + "\n");
  out.write_schema();
  return status;
}

}  // namespace bulksurf
