#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "bulksurf/errors.hpp"
#include "bulksurf/forward.hpp"

using namespace bulksurf;

TEST_CASE("mass is conserved with zero potentials") {
  const Mesh m = build_polar_mesh(16, 32);
  DiffusionSpec diff = DiffusionSpec::uniform(m, 1.0, 1.0);
  diff.a1 = m.sample_bulk([](Point x) { return 1.0 + x.squaredNorm(); });
  const ImexStepper st(m, diff, PotentialSet::zeros(m), {}, 0.01);
  const SystemState x0 =
      InitialData::from_functions(m, [](Point x) { return std::sin(3 * x[0]) + x[1] + 2.0; },
                                  [](Point x) { return x[0] * x[1]; })
          .to_state();
  const Trajectory tr = st.solve(x0, 0.5);
  const double m0 = total_mass(m, tr.states.front());
  for (std::size_t n = 1; n < tr.size(); ++n)
    CHECK(std::abs(total_mass(m, tr.states[n]) - total_mass(m, tr.states[n - 1])) <=
          1e-10 * std::abs(m0));
  CHECK(st.max_offdiagonal() <= 0.0);
}

TEST_CASE("constant data is steady") {
  const Mesh m = build_polar_mesh(8, 16);
  const ImexStepper st(m, DiffusionSpec::uniform(m, 1.0, 1.0), PotentialSet::zeros(m), {}, 0.01);
  const Trajectory tr = st.solve(InitialData::constant(m, 1.5, 0.5).to_state(), 0.2);
  const SystemState& last = tr.states.back();
  CHECK((last.y.array() - 1.5).abs().maxCoeff() < 1e-12);
  CHECK((last.z_gamma.array() - 0.5).abs().maxCoeff() < 1e-12);
}

TEST_CASE("solution affine in time is reproduced exactly") {
  const ManufacturedProblem p = ManufacturedProblem::affine_in_time();
  const ConvergenceTable t = mms_spatial_convergence(p, {{8, 16, 0.01}, {16, 32, 0.01}}, 0.1);
  for (const ConvergenceLevel& l : t.levels) CHECK(l.error < 1e-10);
}

TEST_CASE("manufactured solution converges in space and time") {
  const ManufacturedProblem p = ManufacturedProblem::standard();
  const ConvergenceTable s = mms_spatial_convergence(p, {{8, 16, 0.01}, {16, 32, 0.0025}}, 0.1);
  CHECK(s.final_order() >= 0.9);
  const ConvergenceTable t = mms_temporal_convergence(p, 8, 16, {0.02, 0.01}, 0.2);
  CHECK(t.final_order() >= 0.9);
}

TEST_CASE("step size above the explicit bound is rejected") {
  const Mesh m = build_polar_mesh(8, 16);
  PotentialSet pot = PotentialSet::zeros(m);
  pot.p13.setConstant(5.0);
  const Nonlinearity f = make_power_nonlinearity(1, 1, 4, 4);
  TermList terms{std::make_shared<SemilinearTerms>(pot.p13, pot.q13, f, f)};
  CHECK_THROWS_AS(ImexStepper(m, DiffusionSpec::uniform(m, 1, 1), pot, terms, 0.5),
                  ValidationError);
}

TEST_CASE("observation of z on omega") {
  const Mesh m = build_polar_mesh(8, 16);
  const RegionSet reg = build_regions(m, 0.3, 0.4, 0.8, 0.1, 0.9);
  const ImexStepper st(m, DiffusionSpec::uniform(m, 1, 1), PotentialSet::zeros(m), {}, 0.05);
  const Trajectory tr = st.solve(InitialData::constant(m, 1.0, 2.0).to_state(), 1.0);
  const ObservationRecord obs = observe(tr, m, reg);
  CHECK(obs.cells.size() == reg.omega.size());
  CHECK(obs.values.rows() == static_cast<Eigen::Index>(obs.time_nodes.size()));
  CHECK(obs.norm() < 1e-12);  // steady state has no time derivative
}

TEST_CASE("checkpoint round trip") {
  const Mesh m = build_polar_mesh(8, 16);
  const ImexStepper st(m, DiffusionSpec::uniform(m, 1, 1), PotentialSet::zeros(m), {}, 0.05);
  const Trajectory tr = st.solve(
      InitialData::from_functions(m, [](Point x) { return x[0]; }, [](Point x) { return x[1]; })
          .to_state(),
      0.2);
  const auto path = std::filesystem::temp_directory_path() / "bulksurf_checkpoint_test.bin";
  write_trajectory_binary(path.string(), tr);
  const Trajectory back = read_trajectory_binary(path.string());
  std::filesystem::remove(path);
  REQUIRE(back.size() == tr.size());
  CHECK(back.dt == tr.dt);
  CHECK((back.states.back().z - tr.states.back().z).norm() == 0.0);
  CHECK_THROWS_AS(read_trajectory_binary("/nonexistent/checkpoint.bin"), ValidationError);
}
