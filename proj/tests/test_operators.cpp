#include <doctest.h>

#include <random>

#include "bulksurf/errors.hpp"
#include "bulksurf/operators.hpp"

using namespace bulksurf;

namespace {

Field random_field(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Field f(n);
  for (int i = 0; i < n; ++i) f[i] = nd(rng);
  return f;
}

}  // namespace

TEST_CASE("bulk operator structure") {
  const Mesh m = build_polar_mesh(16, 32);
  const Field a = m.sample_bulk([](Point x) { return 1.0 + 0.5 * x.squaredNorm(); });
  const SparseOp op = assemble_bulk_diffusion(m, a);
  CHECK(op.dimension == m.n_bulk() + m.n_surface());
  CHECK(op.symmetry_defect() < 1e-14);
  CHECK(op.max_row_sum() < 1e-12);
  CHECK(op.max_relative_eigenvalue() < 1e-12);
  const Field ones = Field::Ones(op.dimension);
  CHECK(op.apply(ones).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("surface operator structure") {
  const Mesh m = build_polar_mesh(8, 32);
  const Field d = m.sample_surface([](Point x) { return 1.0 + 0.3 * x[0]; });
  const SparseOp op = assemble_surface_diffusion(m, d);
  CHECK(op.symmetry_defect() < 1e-14);
  CHECK(op.max_row_sum() < 1e-12);
  CHECK(op.max_relative_eigenvalue() < 1e-12);
}

TEST_CASE("green identities hold to roundoff") {
  const Mesh m = build_polar_mesh(16, 32);
  std::mt19937_64 rng(3);
  const Field a = m.sample_bulk([](Point x) { return 2.0 + x[0] * x[1]; });
  const Field d = m.sample_surface([](Point x) { return 1.5 + 0.2 * x[1]; });
  const SparseOp bulk = assemble_bulk_diffusion(m, a);
  const SparseOp surf = assemble_surface_diffusion(m, d);
  for (int k = 0; k < 5; ++k) {
    const Field u = random_field(m.n_bulk(), rng), v = random_field(m.n_bulk(), rng);
    const Field ug = random_field(m.n_surface(), rng), vg = random_field(m.n_surface(), rng);
    CHECK(green_identity_residual(m, bulk, a, u, v, ug, vg) < 1e-10);
    CHECK(surface_green_residual(m, surf, d, ug, vg) < 1e-10);
    CHECK(surface_divergence_residual(m, random_field(m.n_surface(), rng), ug) < 1e-10);
  }
}

TEST_CASE("conormal flux of a linear field") {
  const Mesh m = build_polar_mesh(32, 64);
  const Field a = Field::Ones(m.n_bulk());
  const Field y = m.sample_bulk([](Point x) { return x[0]; });
  const Field yg = m.sample_surface([](Point x) { return x[0]; });
  const Field flux = conormal_flux(m, a, y, yg, FluxOrder::second);
  for (int j = 0; j < m.n_surface(); ++j)
    CHECK(flux[j] == doctest::Approx(m.surface_point(j)[0]).epsilon(1e-8));
}

TEST_CASE("pointwise conormal identity") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  for (int k = 0; k < 200; ++k) {
    Eigen::Matrix2d B;
    B << nd(rng), nd(rng), nd(rng), nd(rng);
    const Eigen::Matrix2d A = B * B.transpose() + 0.1 * Eigen::Matrix2d::Identity();
    const Eigen::Vector2d nu = Eigen::Vector2d(nd(rng), nd(rng)).normalized();
    CHECK(conormal_identity_residual(A, nu, Eigen::Vector2d(nd(rng), nd(rng))) < 1e-12);
  }
  Eigen::Matrix2d bad;
  bad << 1.0, 0.0, 0.0, -1.0;
  CHECK_THROWS_AS(conormal_identity_residual(bad, {1.0, 0.0}, {1.0, 1.0}), ValidationError);
}

TEST_CASE("conormal bound of the weight") {
  const Field a = Field::Constant(16, 1.5);
  CHECK(conormal_weight_bound(a, -2.0, 1.0, 2.0).ok);
  CHECK_FALSE(conormal_weight_bound(Field::Constant(16, 0.5), -2.0, 1.0, 2.0).ok);
}
