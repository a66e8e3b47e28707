#include <doctest.h>

#include "bulksurf/carleman.hpp"
#include "bulksurf/errors.hpp"

using namespace bulksurf;

namespace {

CarlemanConfig reference() {
  CarlemanConfig c;
  c.t0 = 0.1;
  c.t1 = 0.9;
  c.C0 = 0.6;
  return c;
}

const AnalyticField kA = [](const JetPoint& p) { return Jet(1.0) + 0.2 * (p.x1 * p.x1 + p.x2 * p.x2); };
const AnalyticField kD = [](const JetPoint& p) { return Jet(1.0) + 0.1 * p.x1; };

}  // namespace

TEST_CASE("default s1 and reference alpha") {
  const CarlemanConfig c = reference();
  CHECK(c.default_s1() == doctest::Approx(2.0 * 0.16 * std::exp(4.0)));
  CHECK(c.s_effective() == c.default_s1());
  // alpha is smallest at (theta, 0)
  CHECK(weights(c.theta(), Point(0, 0), c).alpha == doctest::Approx(c.alpha_ref()));
  CHECK(weights(0.3, Point(0.5, 0.1), c).alpha > c.alpha_ref());
}

TEST_CASE("weights need an interior time") {
  const CarlemanConfig c = reference();
  CHECK_THROWS_AS(weights(0.1, Point(0, 0), c), ValidationError);
  CHECK_THROWS_AS(weights(0.95, Point(0, 0), c), ValidationError);
}

TEST_CASE("gradient identities and weight properties") {
  const Mesh m = build_polar_mesh(8, 16);
  std::vector<Point> pts;
  for (int c = 0; c < m.n_bulk(); ++c) pts.push_back(m.cell_center(c));
  for (int j = 0; j < m.n_surface(); ++j) pts.push_back(m.surface_point(j));
  for (double lam : {2.0, 4.0}) {
    CarlemanConfig c = reference();
    c.lambda = lam;
    const WeightPropertyReport r = weight_property_margins(c, interior_times(0.1, 0.9, 20), pts, 0.01);
    CHECK(r.ok);
    CHECK(r.inf_xi_scaled >= 1.0 - 1e-12);
    CHECK(r.max_sum_identity_defect < 1e-12);
    CHECK(r.alpha_min_at_theta);
  }
}

TEST_CASE("sigma bounds") {
  const Mesh m = build_polar_mesh(8, 16);
  CHECK(sigma(Point(0.5, 0.0), 2.0) == doctest::Approx(2.0));
  CHECK(sigma_bounds(m, Field::Constant(m.n_bulk(), 1.5), 1.0).ok);
  CHECK_FALSE(sigma_bounds(m, Field::Constant(m.n_bulk(), 0.5), 1.0).ok);
}

TEST_CASE("decomposition identities on the analytic family") {
  const Mesh m = build_polar_mesh(8, 16);
  const CarlemanConfig c = reference();
  const auto times = interior_times(0.1, 0.9, 20);
  const auto family = analytic_test_family(0.1, 0.9);
  CHECK(family.size() == 5);
  for (const auto& [name, z] : family)
    for (double tau : {-3.0, 0.0, 2.0}) {
      const Decomposition d = mn_decomposition(tau, m, z, kA, kD, c, times);
      CHECK(d.residual_M < 1e-8);
      CHECK(d.residual_N < 1e-8);
    }
}

TEST_CASE("ratio does not grow with s") {
  const Mesh m = build_polar_mesh(8, 16);
  const RegionSet reg = build_regions(m, 0.3, 0.4, 0.8, 0.1, 0.9);
  const auto times = interior_times(0.1, 0.9, 20);
  const CarlemanConfig base = reference();
  const auto family = analytic_test_family(0.1, 0.9);
  const SampledField f = sample_analytic(m, reg, family.front().second, kA, kD, times);
  std::vector<SweepRow> rows;
  for (double mult : {1.0, 2.0, 4.0}) {
    CarlemanConfig c = base;
    c.s = mult * base.default_s1();
    rows.push_back({family.front().first, "carleman", carleman_ratio(0.0, f, c)});
    CHECK(std::isfinite(rows.back().result.ratio));
    CHECK(rows.back().result.ratio > 0.0);
  }
  for (const GrowthSummary& g : ratio_growth(rows)) CHECK(g.growth <= 2.0);
}

TEST_CASE("shifted estimate guards the coupling floor") {
  const Mesh m = build_polar_mesh(8, 16);
  const RegionSet reg = build_regions(m, 0.3, 0.4, 0.8, 0.1, 0.9);
  const auto times = interior_times(0.1, 0.9, 10);
  const auto family = analytic_test_family(0.1, 0.9);
  const SampledField y = sample_analytic(m, reg, family[0].second, kA, kD, times);
  const SampledField z = sample_analytic(m, reg, family[1].second, kA, kD, times);
  PotentialSet pot = PotentialSet::zeros(m, 10.0, 0.2);
  pot.p21.setConstant(1.0);
  pot.q21.setConstant(1.0);
  const RatioResult r = shifted_ratio(y, z, pot, reference());
  CHECK(std::isfinite(r.ratio));
  pot.p21.setConstant(0.1);
  CHECK_THROWS_WITH_AS(shifted_ratio(y, z, pot, reference()),
                       "p21 below p0 floor: Assumption I", ValidationError);
}
