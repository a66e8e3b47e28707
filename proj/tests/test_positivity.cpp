#include <doctest.h>

#include <random>

#include "bulksurf/errors.hpp"
#include "bulksurf/positivity.hpp"

using namespace bulksurf;

TEST_CASE("quasi-positivity is detected") {
  const ReactionSet good = make_qp_family({1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0.5});
  CHECK(check_qp(good, qp_samples(4.0, 32)).ok());
  ReactionSet bad = good;
  bad.f1 = make_custom_nonlinearity(
      "neg", [](double, double) { return -1.0; },
      [](double, double) -> std::array<double, 2> { return {0.0, 0.0}; }, 0.0);
  const QPReport r = check_qp(bad, qp_samples(4.0, 32));
  CHECK_FALSE(r.f1_ok);
  REQUIRE(r.worst_violation.has_value());
  CHECK(r.worst_violation->function == "f1");
}

TEST_CASE("nonnegative data stays nonnegative") {
  const Mesh m = build_polar_mesh(8, 16);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-0.5, 1.0);
  auto field = [&](int n) {
    Field f(n);
    for (int i = 0; i < n; ++i) f[i] = std::max(0.0, u(rng));
    return f;
  };
  InitialData init;
  init.y0 = field(m.n_bulk());
  init.z0 = field(m.n_bulk());
  init.y0_gamma = field(m.n_surface());
  init.z0_gamma = field(m.n_surface());
  const ReactionSet r = make_qp_family({2, 1, 1, 0.5, 1, 2, 1, 1, 1, 1, 0.1});
  const PositivityReport rep = positivity_experiment(m, DiffusionSpec::uniform(m, 1, 1), r, init,
                                                     0.3, 0.01, qp_samples(8.0, 32));
  CHECK(rep.nonnegative);
  CHECK(rep.monotone.ok);
  CHECK(rep.max_offdiagonal <= 0.0);
}

TEST_CASE("negative data is rejected") {
  const Mesh m = build_polar_mesh(8, 16);
  InitialData init = InitialData::constant(m, 1.0, 1.0);
  init.z0[3] = -0.1;
  const ReactionSet r = make_qp_family(std::vector<double>(11, 1.0));
  CHECK_THROWS_AS(positivity_experiment(m, DiffusionSpec::uniform(m, 1, 1), r, init, 0.1, 0.01,
                                        qp_samples(4.0, 8)),
                  ValidationError);
}

TEST_CASE("negative-part energy monotonicity tolerance") {
  CHECK(negative_part_energy_monotone({1.0, 0.5, 0.5, 0.1}, 0.01, 1.0).ok);
  const MonotoneReport r = negative_part_energy_monotone({1.0, 0.5, 0.6}, 0.01, 1.0);
  CHECK_FALSE(r.ok);
  CHECK(r.worst_step == 1);
}
