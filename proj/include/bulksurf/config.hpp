#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bulksurf/carleman.hpp"
#include "bulksurf/inverse.hpp"

namespace bulksurf {

/// A scalar field given by name. Closed forms can be sampled on cells and
/// nodes; "csv" holds one value per row for a fixed target size.
///   constant: value
///   linear:   c0 + c1 x1 + c2 x2
///   radial:   c0 + c2 |x|^2
///   fourier:  c0 + sum_k cos[k-1] cos(k phi) + sin[k-1] sin(k phi), phi = arg x
///   csv:      values read from path
struct FieldSpec {
  std::string type = "constant";
  double c0 = 0.0, c1 = 0.0, c2 = 0.0;
  std::vector<double> cos_coeffs, sin_coeffs;
  std::string path;
  std::vector<double> values;  // loaded csv rows
  std::string key;             // config key, for messages

  static FieldSpec constant(double v);
  bool closed_form() const { return type != "csv"; }
  double at(const Point& x) const;
  Field sample_bulk(const Mesh& mesh) const;
  Field sample_surface(const Mesh& mesh) const;
  nlohmann::json to_json() const;
};

struct NonlinearitySpec {
  int d = 1;
  int delta = 1;
  double y_max = 4.0;
  double z_max = 4.0;
  Nonlinearity build() const { return make_power_nonlinearity(d, delta, y_max, z_max); }
};

struct SimulateSettings {
  bool write_trajectory = false;
  bool write_checkpoint = false;
  double mass_tolerance = 1e-10;  // relative drift per step
};

struct PositivitySettings {
  int draws = 20;
  double T = 0.5;
  double dt = 0.01;
  double coefficient_max = 2.0;
  double data_max = 2.0;
  int qp_samples = 64;
  double min_tolerance = 1e-10;  // times the data scale
};

struct CarlemanSettings {
  std::vector<double> lambdas = {2.0, 4.0};
  std::vector<double> s_multipliers = {1.0, 2.0, 4.0};  // times s1
  std::vector<double> taus = {-3.0, 0.0, 2.0};
  double epsilon = 0.5;
  double lambda1 = 2.0;
  int time_intervals = 80;
  double growth_limit = 2.0;
  double decomposition_tolerance = 1e-8;
  int spd_samples = 1000;
  double spd_tolerance = 1e-12;
};

struct GradcheckSettings {
  int points = 3;
  int directions = 20;
  double h = 1e-5;
  double spread = 0.3;
  double tolerance = 1e-5;
};

/// Per-block coefficient values: either one value per patch/arc or a
/// closed form evaluated at patch centroids and arc midpoints.
struct BlockSpec {
  std::optional<FieldSpec> field;
  std::vector<double> values;
};

struct InverseSettings {
  int radial = 4, angular = 4, arcs = 8;
  std::vector<std::string> unknowns = {"p13", "q21"};
  BlockSpec truth[4];          // p13, p21, q13, q21
  BlockSpec initial_guess[4];  // unknown blocks only; known blocks use the truth
  double reg_weight = 0.0;
  std::vector<double> reg_sweep;  // optional L-curve
  double noise_level = 0.0;
  OptimizerConfig optimizer;
  double error_tolerance = 0.05;
};

struct StabilitySettings {
  int draws = 20;
  double scale = 1e-3;
  StabilityMode mode = StabilityMode::forward_from_theta;
  double damping_cap = 1e2;
  double spread_limit = 10.0;
  double linear_tolerance = 0.1;
  double midtime_constant = 20.0;  // midtime defect <= constant * dt
};

/// Everything a subcommand needs. Defaults describe the desk-scale
/// reference setup; a config file overrides any subset.
struct RunConfig {
  std::uint64_t seed = 1;
  int threads = 0;

  int n_r = 16, n_theta = 32;
  double radius = 1.0;
  double rho_prime = 0.3, rho_dprime = 0.4, rho_omega = 0.8;
  double t0 = 0.1, t1 = 0.9;
  double dt = 0.005, T = 1.0;

  FieldSpec a1, a2, d1, d2;
  double beta = 1.0, beta_gamma = 1.0;
  FieldSpec p11, p12, p13, p21, p22, q11, q12, q13, q21, q22;
  double R_bound = 10.0, p0 = 0.2;
  NonlinearitySpec f, g;
  FieldSpec init_y, init_z;
  std::optional<FieldSpec> init_y_gamma, init_z_gamma;
  double r_floor = 0.5, r1 = 0.1;

  SimulateSettings simulate;
  PositivitySettings positivity;
  CarlemanSettings carleman;
  GradcheckSettings gradcheck;
  InverseSettings inverse;
  StabilitySettings stability;

  RunConfig();

  /// Parses JSON with field-level validation; relative csv paths resolve
  /// against `base_dir`. Unknown keys are errors.
  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  static RunConfig load(const std::filesystem::path& path);
  /// Effective configuration, defaults included.
  nlohmann::json to_json() const;

  /// Builds every derived object once; throws ValidationError naming the field.
  void validate() const;

  Mesh mesh() const;
  RegionSet regions(const Mesh& mesh) const;
  DiffusionSpec diffusion(const Mesh& mesh) const;
  PotentialSet potentials(const Mesh& mesh) const;
  InitialData initial(const Mesh& mesh) const;
  int n_steps() const;
  ModelSetup model() const;
  CarlemanConfig carleman_config() const;
  InverseSetup inverse_setup() const;
  CoefficientVector truth(const InverseSetup& setup) const;
  CoefficientVector initial_guess(const InverseSetup& setup) const;
};

}  // namespace bulksurf
