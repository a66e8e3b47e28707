#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "bulksurf/errors.hpp"
#include "bulksurf/geometry.hpp"

using namespace bulksurf;

TEST_CASE("polar mesh measures") {
  const Mesh m = build_polar_mesh(16, 32);
  CHECK(m.n_bulk() == 512);
  CHECK(m.n_surface() == 32);
  CHECK(m.area() == doctest::Approx(M_PI).epsilon(1e-12));
  CHECK(m.perimeter() == doctest::Approx(2.0 * M_PI).epsilon(1e-12));
  CHECK((m.cell_areas.array() > 0.0).all());
}

TEST_CASE("trace map points at the outer ring") {
  const Mesh m = build_polar_mesh(8, 16);
  for (int j = 0; j < m.n_surface(); ++j) {
    const int c = m.trace_map[j];
    CHECK(m.cell_r[c] == doctest::Approx(1.0 - 0.5 * m.dr));
    const Point x = m.cell_center(c);
    const Point s = m.surface_point(j);
    CHECK(std::abs(std::atan2(x[1], x[0]) - std::atan2(s[1], s[0])) < 1e-12);
    CHECK(m.outward_normal[j].norm() == doctest::Approx(1.0));
  }
}

TEST_CASE("interior faces are symmetric and positive") {
  const Mesh m = build_polar_mesh(8, 16);
  for (const InteriorFace& f : m.faces) {
    CHECK(f.left != f.right);
    CHECK(f.length > 0.0);
    CHECK(f.distance > 0.0);
  }
}

TEST_CASE("observation regions are nested") {
  const Mesh m = build_polar_mesh(16, 32);
  const RegionSet r = build_regions(m, 0.3, 0.4, 0.8, 0.1, 0.9);
  auto inside = [](const std::vector<int>& small, const std::vector<int>& big) {
    return std::all_of(small.begin(), small.end(), [&](int c) {
      return std::find(big.begin(), big.end(), c) != big.end();
    });
  };
  CHECK(inside(r.omega_prime, r.omega_dprime));
  CHECK(inside(r.omega_dprime, r.omega));
  CHECK(r.omega.size() < static_cast<std::size_t>(m.n_bulk()));
  CHECK(r.theta == doctest::Approx(0.5));
  CHECK(r.omega_mask(m).sum() == doctest::Approx(static_cast<double>(r.omega.size())));
}

TEST_CASE("geometry rejects bad parameters") {
  CHECK_THROWS_AS(build_polar_mesh(2, 32), ValidationError);
  CHECK_THROWS_AS(build_polar_mesh(16, 7), ValidationError);
  const Mesh m = build_polar_mesh(16, 32);
  CHECK_THROWS_AS(build_regions(m, 0.5, 0.4, 0.8, 0.1, 0.9), ValidationError);
  CHECK_THROWS_AS(build_regions(m, 0.3, 0.4, 0.8, 0.9, 0.1), ValidationError);
}
