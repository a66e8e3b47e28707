#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "bulksurf/config.hpp"
#include "bulksurf/errors.hpp"

using namespace bulksurf;
using nlohmann::json;

namespace fs = std::filesystem;

TEST_CASE("defaults validate and round-trip") {
  const RunConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.n_steps() == 200);
  const json j = c.to_json();
  const RunConfig back = RunConfig::from_json(j, ".");
  CHECK(back.to_json() == j);
}

TEST_CASE("overrides reach the model") {
  const json j = json::parse(R"({
    "mesh": {"n_r": 8, "n_theta": 16},
    "solver": {"dt": 0.01, "T": 1.0},
    "potentials": {"p13": {"type": "radial", "c0": 1.0, "c2": 0.5}, "q21": 2.0},
    "inverse": {"patches": {"radial": 2, "angular": 2, "arcs": 4},
                "truth": {"p13": [1, 1.1, 1.2, 1.3], "q21": 2.0},
                "initial_guess": {"p13": 1.0, "q21": 2.0}}
  })");
  const RunConfig c = RunConfig::from_json(j, ".");
  const ModelSetup m = c.model();
  CHECK(m.mesh.n_bulk() == 128);
  CHECK(m.n_steps == 100);
  CHECK(m.potentials.q21.minCoeff() == 2.0);
  const Point x = m.mesh.cell_center(5);
  CHECK(m.potentials.p13[5] == doctest::Approx(1.0 + 0.5 * x.squaredNorm()));
  const InverseSetup s = c.inverse_setup();
  CHECK(c.truth(s).p13[3] == 1.3);
  CHECK(c.truth(s).q21[0] == doctest::Approx(2.0));
}

TEST_CASE("errors name the offending field") {
  CHECK_THROWS_WITH_AS(RunConfig::from_json(json::parse(R"({"mesh": {"nr": 8}})"), "."),
                       "mesh.nr: unknown key", ValidationError);
  CHECK_THROWS_WITH_AS(RunConfig::from_json(json::parse(R"({"solver": {"dt": "x"}})"), "."),
                       "solver.dt: expected a number", ValidationError);
  CHECK_THROWS_WITH_AS(RunConfig::from_json(json::parse(R"({"solver": {"dt": -1}})"), "."),
                       "solver.dt: must be positive", ValidationError);
  CHECK_THROWS_WITH_AS(
      RunConfig::from_json(
          json::parse(R"({"potentials": {"p13": {"type": "csv", "path": "missing.csv"}}})"), "."),
      doctest::Contains("potentials.p13.path: file not found"), ValidationError);
  CHECK_THROWS_WITH_AS(
      RunConfig::from_json(json::parse(R"({"inverse": {"unknowns": ["p99"]}})"), "."),
      doctest::Contains("inverse.unknowns"), ValidationError);
  CHECK_THROWS_WITH_AS(
      RunConfig::from_json(json::parse(R"({"inverse": {"truth": {"p13": [1, 2]}}})"), "."),
      doctest::Contains("inverse.truth.p13: expected 16 values"), ValidationError);
}

TEST_CASE("csv fields load relative to the config") {
  const fs::path dir = fs::temp_directory_path() / "bulksurf_config_test";
  fs::create_directories(dir);
  {
    std::ofstream os(dir / "a1.csv");
    os << "value\n";
    for (int c = 0; c < 128; ++c) os << 1.0 + c / 1000.0 << "\n";
  }
  {
    std::ofstream os(dir / "run.json");
    os << R"({"mesh": {"n_r": 8, "n_theta": 16},
              "diffusion": {"a1": {"type": "csv", "path": "a1.csv"}},
              "inverse": {"patches": {"radial": 2, "angular": 2, "arcs": 4},
                          "truth": {"p13": 1.0, "q21": 1.0}}})";
  }
  const RunConfig c = RunConfig::load(dir / "run.json");
  CHECK(c.diffusion(c.mesh()).a1[127] == doctest::Approx(1.127));
  {
    std::ofstream os(dir / "a1.csv");
    os << "1.0\n2.0\n";
  }
  CHECK_THROWS_WITH_AS(RunConfig::load(dir / "run.json"), doctest::Contains("expected 128"),
                       ValidationError);
  fs::remove_all(dir);
}
