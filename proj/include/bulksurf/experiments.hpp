#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bulksurf/config.hpp"

namespace bulksurf {

/// One pass/fail line of a summary: value <relation> limit.
struct Check {
  std::string name;
  double value = 0.0;
  double limit = 0.0;
  std::string relation = "<=";  // "<=", ">=" or "=="
  bool pass = false;

  static Check at_most(std::string name, double value, double limit);
  static Check at_least(std::string name, double value, double limit);
  static Check holds(std::string name, bool ok);
};

/// Results directory. Every file is written to a temporary name and renamed,
/// so a reader never sees a partial table.
class ResultDir {
 public:
  explicit ResultDir(std::filesystem::path dir);

  const std::filesystem::path& path() const { return dir_; }
  void write(const std::string& name, const std::string& content);
  /// Writes a table and records its columns in the schema.
  void csv(const std::string& name, const std::string& description, const std::string& content);
  /// Two-column plot series, written as series_<name>.csv.
  void series(const std::string& name, const std::string& x_label, const std::string& y_label,
              const std::vector<double>& x, const std::vector<double>& y);
  void write_schema();

 private:
  std::filesystem::path dir_;
  nlohmann::json schema_ = nlohmann::json::object();
};

struct ExperimentOutcome {
  std::vector<Check> checks;
  nlohmann::json summary = nlohmann::json::object();  // experiment-specific values

  bool passed() const;
};

const std::vector<std::string>& subcommands();

/// Runs one subcommand, writing its tables into `out`. Throws
/// ValidationError or NumericalError.
ExperimentOutcome run_experiment(const std::string& subcommand, const RunConfig& cfg,
                                 ResultDir& out);

/// Full orchestration: config echo, tables, summary.json, schema.json.
/// Returns the process exit status: 0 all checks pass, 1 validation error,
/// 2 numerical error, 3 completed with a failed check.
int run_and_report(const std::string& subcommand, const RunConfig& cfg,
                   const std::filesystem::path& out_dir, std::ostream& log);

/// "%.17g".
std::string format_double(double v);

}  // namespace bulksurf
