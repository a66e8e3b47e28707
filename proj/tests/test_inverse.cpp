#include <doctest.h>

#include <sstream>

#include "bulksurf/errors.hpp"
#include "bulksurf/inverse.hpp"

using namespace bulksurf;

namespace {

ModelSetup small_model() {
  ModelSetup m;
  m.mesh = build_polar_mesh(8, 16);
  m.regions = build_regions(m.mesh, 0.3, 0.4, 0.8, 0.1, 0.9);
  m.diffusion = DiffusionSpec::uniform(m.mesh, 1.0, 1.0);
  m.potentials = PotentialSet::zeros(m.mesh, 10.0, 0.2);
  m.potentials.p11.setConstant(-0.5);
  m.potentials.p12.setConstant(0.1);
  m.potentials.p22.setConstant(-0.5);
  m.potentials.q11.setConstant(-0.5);
  m.potentials.q12.setConstant(0.1);
  m.potentials.q22.setConstant(-0.5);
  m.potentials.p13 = m.mesh.sample_bulk([](Point x) { return 1.0 + 0.3 * x[0]; });
  m.potentials.p21.setConstant(1.0);
  m.potentials.q13.setConstant(0.5);
  m.potentials.q21.setConstant(1.0);
  m.f = make_power_nonlinearity(1, 1, 4, 4);
  m.g = make_power_nonlinearity(1, 1, 4, 4);
  m.init = InitialData::from_functions(m.mesh, [](Point x) { return 1 + 0.3 * x[0]; },
                                       [](Point x) { return 2 + 0.3 * x[1]; });
  m.dt = 0.01;
  m.n_steps = 100;
  m.r_floor = 0.5;
  m.r1 = 0.1;
  return m;
}

InverseSetup small_setup() {
  InverseSetup s;
  s.model = small_model();
  s.layout = PatchLayout::build(s.model.mesh, 2, 2, 4);
  s.active = {true, false, false, true};
  s.prior = CoefficientVector::constant(s.layout, 1.0, 1.0, 0.5, 1.0, 10.0, 0.2);
  return s;
}

CoefficientVector small_truth(const InverseSetup& s) {
  CoefficientVector t = s.prior;
  t.p13 << 1.2, 0.8, 1.1, 0.9;
  t.q21 << 1.3, 0.9, 1.0, 0.7;
  return t;
}

}  // namespace

TEST_CASE("patch layout: equal-area bands and adjoint expand/sum") {
  const Mesh m = build_polar_mesh(16, 32);
  const PatchLayout l = PatchLayout::build(m, 4, 4, 8);
  CHECK(l.n_patches() == 16);
  Field ones = Field::Ones(16);
  const Field areas = l.sum_bulk(m.cell_areas);
  CHECK(areas.sum() == doctest::Approx(M_PI));
  CHECK(areas.maxCoeff() / areas.minCoeff() < 1.5);
  const Field p = Field::LinSpaced(16, 0.0, 1.0);
  const Field c = Field::LinSpaced(m.n_bulk(), -1.0, 2.0);
  CHECK(l.expand_bulk(p).dot(c) == doctest::Approx(p.dot(l.sum_bulk(c))));
  const Field q = Field::LinSpaced(8, 0.0, 1.0);
  const Field s = Field::LinSpaced(m.n_surface(), -1.0, 2.0);
  CHECK(l.expand_surface(q).dot(s) == doctest::Approx(q.dot(l.sum_surface(s))));
}

TEST_CASE("coefficient bounds and projection") {
  const Mesh m = build_polar_mesh(8, 16);
  const PatchLayout l = PatchLayout::build(m, 2, 2, 4);
  CoefficientVector c = CoefficientVector::constant(l, 1.0, 1.0, 0.5, 1.0, 2.0, 0.2);
  CHECK(c.size() == 4 + 4 + 4 + 4);
  CHECK(c.admissible());
  c.p21[0] = 0.0;
  c.p13[1] = 5.0;
  CHECK_FALSE(c.admissible());
  const CoefficientVector p = c.projected();
  CHECK(p.admissible());
  CHECK(p.p21[0] == doctest::Approx(0.2));
  CHECK(p.p13[1] == doctest::Approx(2.0));
  CHECK((c.with_values(c.pack()).pack() - c.pack()).norm() == 0.0);
}

TEST_CASE("adjoint gradient matches central differences") {
  InverseSetup s = small_setup();
  const CoefficientVector truth = small_truth(s);
  const ObservationRecord obs = simulate_twin(s, truth, 0.0, 1);
  s.active = {true, true, true, true};
  s.reg_weight = 1e-3;
  const GradientCheckReport r = gradient_check(s, s.prior, obs, 2, 5, 1e-5, 0.2, 3, 1);
  CHECK(r.rows.size() == 10);
  CHECK(r.max_relative_error < 1e-5);
}

TEST_CASE("objective vanishes at the truth without noise") {
  const InverseSetup s = small_setup();
  const CoefficientVector truth = small_truth(s);
  const ObservationRecord obs = simulate_twin(s, truth, 0.0, 1);
  CHECK(objective(s, truth, obs) < 1e-24);
  CHECK(objective(s, s.prior, obs) > 0.0);
  const ObservationRecord noisy = simulate_twin(s, truth, 0.01, 1);
  const double rel = (noisy - obs).norm() / obs.norm();
  CHECK(rel == doctest::Approx(0.01).epsilon(0.3));
}

TEST_CASE("twin reconstruction on a small problem") {
  const InverseSetup s = small_setup();
  const CoefficientVector truth = small_truth(s);
  const ObservationRecord obs = simulate_twin(s, truth, 0.0, 1);
  OptimizerConfig opt;
  opt.max_iter = 60;
  const ReconstructionResult r = reconstruct(s, obs, s.prior, opt);
  CHECK(relative_coefficient_error(s, r.coeffs, truth) < 0.01);
  for (std::size_t k = 1; k < r.history.size(); ++k)
    CHECK(r.history[k].objective <= r.history[k - 1].objective);
  std::ostringstream os;
  write_history_csv(os, r.history);
  CHECK(os.str().rfind("iter,", 0) == 0);
}

TEST_CASE("twin rejects a coupling below the floor") {
  const InverseSetup s = small_setup();
  CoefficientVector bad = small_truth(s);
  bad.p21.setConstant(0.1);
  CHECK_THROWS_WITH_AS(simulate_twin(s, bad, 0.0, 1),
                       doctest::Contains("p21 below p0 floor: Assumption I"), ValidationError);
}

TEST_CASE("mid-time identities and stability ensemble") {
  ModelSetup m = small_model();
  m.dt = 0.005;
  m.n_steps = 200;
  const Perturbation p = sample_perturbation(m.mesh, 1e-3, 4);
  CHECK(p.norm(m.mesh) > 0.0);
  const MidtimeErrors e = midtime_identity_errors(m, p);
  CHECK(e.y < 0.2);
  CHECK(e.z < 0.2);
  StabilityConfig cfg;
  cfg.n_draws = 4;
  const StabilityReport r = stability_ensemble(m, cfg);
  CHECK(r.records.size() == 4);
  CHECK(r.max_linear_response_deviation < 0.01);
  CHECK(r.spread >= 1.0);
  CHECK(r.measurement == "half-window variant");
}
