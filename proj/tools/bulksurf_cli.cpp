#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "bulksurf/config.hpp"
#include "bulksurf/errors.hpp"
#include "bulksurf/experiments.hpp"

namespace {

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bulk-surface parabolic system: simulation, verification and inverse experiments"};
  app.require_subcommand(1, 1);
  app.fallthrough();

  std::string config_path, out_dir;
  std::uint64_t seed = 0;
  int threads = -1;
  app.add_option("--config", config_path, "JSON configuration file");
  app.add_option("--out", out_dir, "results directory (default results/<subcommand>)");
  auto* seed_opt = app.add_option("--seed", seed, "random seed");
  app.add_option("--threads", threads, "worker threads, 0 = hardware concurrency")
      ->check(CLI::NonNegativeNumber);
  for (const std::string& name : bulksurf::subcommands()) app.add_subcommand(name);

  CLI11_PARSE(app, argc, argv);
  const std::string sub = app.get_subcommands().front()->get_name();

  bulksurf::RunConfig cfg;
  try {
    if (!config_path.empty()) cfg = bulksurf::RunConfig::load(config_path);
    if (*seed_opt) {
      cfg.seed = seed;
    } else if (const char* s = std::getenv("BULKSURF_SEED"); s && *s) {
      try {
        cfg.seed = std::stoull(s);
      } catch (const std::exception&) {
        throw bulksurf::ValidationError(std::string("BULKSURF_SEED: not an integer: ") + s);
      }
    }
    if (threads >= 0) cfg.threads = threads;
  } catch (const bulksurf::ValidationError& e) {
    std::cerr << "validation error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }

  if (out_dir.empty()) out_dir = env_or("BULKSURF_OUT", "results") + "/" + sub;
  const int status = bulksurf::run_and_report(sub, cfg, out_dir, std::cout);
  std::cout << "results: " << out_dir << " (exit " << status << ")\n";
  return status;
}
