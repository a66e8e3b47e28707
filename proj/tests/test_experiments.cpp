#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "bulksurf/experiments.hpp"

using namespace bulksurf;
using nlohmann::json;

namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

RunConfig zero_potential_config() {
  return RunConfig::from_json(json::parse(R"({
    "mesh": {"n_r": 8, "n_theta": 16},
    "potentials": {"p11": 0, "p12": 0, "p13": 0, "p21": 0, "p22": 0,
                   "q11": 0, "q12": 0, "q13": 0, "q21": 0, "q22": 0},
    "initial": {"y": 1.5, "z": 0.5},
    "inverse": {"patches": {"radial": 2, "angular": 2, "arcs": 4}, "truth": {"p13": 1.0, "q21": 1.0}}
  })"),
                              ".");
}

}  // namespace

TEST_CASE("simulate writes a complete results directory") {
  const fs::path dir = fs::temp_directory_path() / "bulksurf_simulate_test";
  fs::remove_all(dir);
  std::ostringstream log;
  CHECK(run_and_report("simulate", zero_potential_config(), dir, log) == 0);
  for (const char* f : {"config.json", "summary.json", "schema.json", "trajectory_summary.csv",
                        "series_mass.csv"})
    CHECK(fs::exists(dir / f));
  const json s = json::parse(slurp(dir / "summary.json"));
  CHECK(s["status"] == "pass");
  CHECK(s["effective"].contains("s1"));
  CHECK(s["effective"].contains("lambda1"));
  CHECK(s["effective"].contains("epsilon"));
  CHECK(s["effective"]["tolerances"].contains("mass_per_step"));
  CHECK(s["results"]["conservative"] == true);
  const json schema = json::parse(slurp(dir / "schema.json"));
  CHECK(schema["series_mass.csv"]["columns"] == json({"t", "mass"}));
  CHECK(log.str().find("PASS mass_drift_per_step") != std::string::npos);

  const std::string first = slurp(dir / "trajectory_summary.csv");
  CHECK(run_and_report("simulate", zero_potential_config(), dir, log) == 0);
  CHECK(slurp(dir / "trajectory_summary.csv") == first);
  fs::remove_all(dir);
}

TEST_CASE("exit status reflects validation failures and failed checks") {
  const fs::path dir = fs::temp_directory_path() / "bulksurf_status_test";
  std::ostringstream log;
  RunConfig c = zero_potential_config();
  CHECK(run_and_report("no-such-command", c, dir, log) == 1);
  c.p0 = 0.2;  // the zero coupling now violates the floor the twin requires
  CHECK(run_and_report("gradcheck", c, dir, log) == 1);
  CHECK(log.str().find("Assumption I") != std::string::npos);
  RunConfig strict = zero_potential_config();
  strict.simulate.mass_tolerance = -1.0;  // unattainable
  CHECK(run_and_report("simulate", strict, dir, log) == 3);
  CHECK(log.str().find("FAIL mass_drift_per_step") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("subcommand list") {
  const auto& s = subcommands();
  CHECK(s.size() == 7);
  CHECK(s.front() == "simulate");
}
