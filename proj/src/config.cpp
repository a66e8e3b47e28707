#include "bulksurf/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "bulksurf/errors.hpp"

namespace bulksurf {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* const kBlocks[4] = {"p13", "p21", "q13", "q21"};

// Typed access to one JSON object; finish() rejects keys nobody asked for.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    require(j_.is_object(), where() + ": expected an object");
  }

  std::string key(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }
  bool has(const std::string& k) {
    used_.insert(k);
    return j_.contains(k);
  }
  const json& raw(const std::string& k) {
    used_.insert(k);
    return j_.at(k);
  }

  void number(const std::string& k, double& out) {
    if (!has(k)) return;
    const json& v = j_.at(k);
    require(v.is_number(), key(k) + ": expected a number");
    out = v.get<double>();
    require(std::isfinite(out), key(k) + ": must be finite");
  }
  void integer(const std::string& k, int& out) {
    if (!has(k)) return;
    const json& v = j_.at(k);
    require(v.is_number_integer(), key(k) + ": expected an integer");
    out = v.get<int>();
  }
  void boolean(const std::string& k, bool& out) {
    if (!has(k)) return;
    require(j_.at(k).is_boolean(), key(k) + ": expected true or false");
    out = j_.at(k).get<bool>();
  }
  void string(const std::string& k, std::string& out) {
    if (!has(k)) return;
    require(j_.at(k).is_string(), key(k) + ": expected a string");
    out = j_.at(k).get<std::string>();
  }
  void numbers(const std::string& k, std::vector<double>& out) {
    if (!has(k)) return;
    const json& v = j_.at(k);
    require(v.is_array(), key(k) + ": expected an array of numbers");
    out.clear();
    for (const auto& e : v) {
      require(e.is_number(), key(k) + ": expected an array of numbers");
      out.push_back(e.get<double>());
    }
  }
  void strings(const std::string& k, std::vector<std::string>& out) {
    if (!has(k)) return;
    const json& v = j_.at(k);
    require(v.is_array(), key(k) + ": expected an array of strings");
    out.clear();
    for (const auto& e : v) {
      require(e.is_string(), key(k) + ": expected an array of strings");
      out.push_back(e.get<std::string>());
    }
  }
  std::optional<Reader> child(const std::string& k) {
    if (!has(k)) return std::nullopt;
    return Reader(j_.at(k), key(k));
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) throw ValidationError(key(it.key()) + ": unknown key");
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

std::vector<double> read_csv_column(const fs::path& p, const std::string& key) {
  std::ifstream in(p);
  if (!in) throw ValidationError(key + ": file not found: " + p.string());
  std::vector<double> out;
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    ++row;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::string cell = line.substr(first, line.find(',', first) - first);
    std::istringstream ss(cell);
    double v;
    if (!(ss >> v)) {
      if (out.empty() && row == 1) continue;  // header
      throw ValidationError(key + ": " + p.string() + " row " + std::to_string(row) +
                            " is not a number");
    }
    out.push_back(v);
  }
  return out;
}

FieldSpec parse_field(const json& v, const std::string& key, const fs::path& base) {
  FieldSpec f;
  f.key = key;
  if (v.is_number()) {
    f.c0 = v.get<double>();
    return f;
  }
  Reader r(v, key);
  r.string("type", f.type);
  if (f.type == "constant") {
    r.number("value", f.c0);
  } else if (f.type == "linear") {
    r.number("c0", f.c0);
    r.number("c1", f.c1);
    r.number("c2", f.c2);
  } else if (f.type == "radial") {
    r.number("c0", f.c0);
    r.number("c2", f.c2);
  } else if (f.type == "fourier") {
    r.number("c0", f.c0);
    r.numbers("cos", f.cos_coeffs);
    r.numbers("sin", f.sin_coeffs);
  } else if (f.type == "csv") {
    r.string("path", f.path);
    require(!f.path.empty(), key + ".path: required for type csv");
    fs::path p = f.path;
    if (p.is_relative()) p = base / p;
    f.path = p.string();
    f.values = read_csv_column(p, key + ".path");
  } else {
    throw ValidationError(key + ".type: unknown field type '" + f.type +
                          "' (constant, linear, radial, fourier, csv)");
  }
  r.finish();
  return f;
}

void read_field(Reader& r, const std::string& k, FieldSpec& out, const fs::path& base) {
  if (r.has(k)) out = parse_field(r.raw(k), r.key(k), base);
}

BlockSpec parse_block(const json& v, const std::string& key, const fs::path& base) {
  BlockSpec b;
  if (v.is_array()) {
    for (const auto& e : v) {
      require(e.is_number(), key + ": expected numbers");
      b.values.push_back(e.get<double>());
    }
  } else {
    b.field = parse_field(v, key, base);
  }
  return b;
}

json block_json(const BlockSpec& b) {
  if (b.field) return b.field->to_json();
  if (!b.values.empty()) return b.values;
  return nullptr;
}

const char* mode_name(StabilityMode m) {
  return m == StabilityMode::forward_from_theta ? "forward_from_theta" : "full_window_regularized";
}

// Area- (arc-) weighted mean of a field over each patch (arc).
Field block_values(const BlockSpec& b, bool bulk, const InverseSetup& s, const FieldSpec& fallback,
                   const std::string& key) {
  const Mesh& mesh = s.model.mesh;
  const int n = bulk ? s.layout.n_patches() : s.layout.n_arcs;
  if (!b.values.empty()) {
    require(static_cast<int>(b.values.size()) == n,
            key + ": expected " + std::to_string(n) + " values, got " +
                std::to_string(b.values.size()));
    return Eigen::Map<const Field>(b.values.data(), n);
  }
  const FieldSpec& f = b.field ? *b.field : fallback;
  if (bulk) {
    const Field w = mesh.cell_areas;
    return s.layout.sum_bulk(f.sample_bulk(mesh).cwiseProduct(w))
        .cwiseQuotient(s.layout.sum_bulk(w));
  }
  const Field w = mesh.surface_weights;
  return s.layout.sum_surface(f.sample_surface(mesh).cwiseProduct(w))
      .cwiseQuotient(s.layout.sum_surface(w));
}

}  // namespace

// ---------------------------------------------------------------------------

FieldSpec FieldSpec::constant(double v) {
  FieldSpec f;
  f.c0 = v;
  return f;
}

double FieldSpec::at(const Point& x) const {
  if (type == "constant") return c0;
  if (type == "linear") return c0 + c1 * x[0] + c2 * x[1];
  if (type == "radial") return c0 + c2 * x.squaredNorm();
  if (type == "fourier") {
    const double phi = std::atan2(x[1], x[0]);
    double v = c0;
    for (std::size_t k = 0; k < cos_coeffs.size(); ++k) v += cos_coeffs[k] * std::cos((k + 1) * phi);
    for (std::size_t k = 0; k < sin_coeffs.size(); ++k) v += sin_coeffs[k] * std::sin((k + 1) * phi);
    return v;
  }
  throw ValidationError(key + ": a csv field has no pointwise closed form");
}

Field FieldSpec::sample_bulk(const Mesh& mesh) const {
  if (type != "csv") return mesh.sample_bulk([&](Point x) { return at(x); });
  require(static_cast<int>(values.size()) == mesh.n_bulk(),
          key + ": " + path + " has " + std::to_string(values.size()) + " rows, expected " +
              std::to_string(mesh.n_bulk()) + " (one per cell)");
  return Eigen::Map<const Field>(values.data(), mesh.n_bulk());
}

Field FieldSpec::sample_surface(const Mesh& mesh) const {
  if (type != "csv") return mesh.sample_surface([&](Point x) { return at(x); });
  require(static_cast<int>(values.size()) == mesh.n_surface(),
          key + ": " + path + " has " + std::to_string(values.size()) + " rows, expected " +
              std::to_string(mesh.n_surface()) + " (one per surface node)");
  return Eigen::Map<const Field>(values.data(), mesh.n_surface());
}

json FieldSpec::to_json() const {
  if (type == "constant") return {{"type", "constant"}, {"value", c0}};
  if (type == "linear") return {{"type", "linear"}, {"c0", c0}, {"c1", c1}, {"c2", c2}};
  if (type == "radial") return {{"type", "radial"}, {"c0", c0}, {"c2", c2}};
  if (type == "fourier")
    return {{"type", "fourier"}, {"c0", c0}, {"cos", cos_coeffs}, {"sin", sin_coeffs}};
  return {{"type", "csv"}, {"path", path}};
}

// ---------------------------------------------------------------------------

RunConfig::RunConfig() {
  a1 = a2 = d1 = d2 = FieldSpec::constant(1.0);
  p11 = p22 = q11 = q22 = FieldSpec::constant(-0.5);
  p12 = q12 = FieldSpec::constant(0.1);
  p13.type = "linear";
  p13.c0 = 1.0;
  p13.c1 = 0.3;
  p21 = q21 = FieldSpec::constant(1.0);
  q13 = FieldSpec::constant(0.5);
  init_y.type = init_z.type = "linear";
  init_y.c0 = 1.0;
  init_y.c1 = 0.3;
  init_z.c0 = 2.0;
  init_z.c2 = 0.3;

  std::vector<double> p13_truth(16), q21_truth(8);
  for (int k = 0; k < 16; ++k) p13_truth[k] = 1.0 + 0.4 * std::sin(1.3 * k + 0.4);
  for (int k = 0; k < 8; ++k) q21_truth[k] = 1.0 + 0.5 * std::cos(2.0 * M_PI * k / 8.0);
  inverse.truth[0].values = p13_truth;
  inverse.truth[3].values = q21_truth;
  inverse.initial_guess[0].field = FieldSpec::constant(1.0);
  inverse.initial_guess[3].field = FieldSpec::constant(1.0);
  inverse.optimizer.max_iter = 100;
}

RunConfig RunConfig::from_json(const json& j, const fs::path& base) {
  RunConfig c;
  Reader r(j, "");
  if (r.has("seed")) {
    const json& v = r.raw("seed");
    require(v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0),
            "seed: expected a nonnegative integer");
    c.seed = v.get<std::uint64_t>();
  }
  r.integer("threads", c.threads);
  if (auto m = r.child("mesh")) {
    m->integer("n_r", c.n_r);
    m->integer("n_theta", c.n_theta);
    m->number("radius", c.radius);
    m->finish();
  }
  if (auto g = r.child("regions")) {
    g->number("rho_prime", c.rho_prime);
    g->number("rho_dprime", c.rho_dprime);
    g->number("rho_omega", c.rho_omega);
    g->number("t0", c.t0);
    g->number("t1", c.t1);
    g->finish();
  }
  if (auto s = r.child("solver")) {
    s->number("dt", c.dt);
    s->number("T", c.T);
    s->finish();
  }
  if (auto d = r.child("diffusion")) {
    read_field(*d, "a1", c.a1, base);
    read_field(*d, "a2", c.a2, base);
    read_field(*d, "d1", c.d1, base);
    read_field(*d, "d2", c.d2, base);
    d->number("beta", c.beta);
    d->number("beta_gamma", c.beta_gamma);
    d->finish();
  }
  if (auto p = r.child("potentials")) {
    for (auto [name, slot] : {std::pair{"p11", &c.p11}, {"p12", &c.p12}, {"p13", &c.p13},
                              {"p21", &c.p21}, {"p22", &c.p22}, {"q11", &c.q11},
                              {"q12", &c.q12}, {"q13", &c.q13}, {"q21", &c.q21},
                              {"q22", &c.q22}})
      read_field(*p, name, *slot, base);
    p->number("R_bound", c.R_bound);
    p->number("p0", c.p0);
    p->finish();
  }
  if (auto n = r.child("nonlinearity")) {
    for (auto [name, slot] : {std::pair{"f", &c.f}, {"g", &c.g}})
      if (auto s = n->child(name)) {
        s->integer("d", slot->d);
        s->integer("delta", slot->delta);
        s->number("y_max", slot->y_max);
        s->number("z_max", slot->z_max);
        s->finish();
        require(slot->d >= 0 && slot->delta >= 0,
                s->key("d") + ": exponents must be nonnegative integers");
        require(slot->y_max > 0 && slot->z_max > 0, s->key("y_max") + ": box must be positive");
      }
    n->finish();
  }
  if (auto i = r.child("initial")) {
    read_field(*i, "y", c.init_y, base);
    read_field(*i, "z", c.init_z, base);
    if (i->has("y_gamma")) c.init_y_gamma = parse_field(i->raw("y_gamma"), i->key("y_gamma"), base);
    if (i->has("z_gamma")) c.init_z_gamma = parse_field(i->raw("z_gamma"), i->key("z_gamma"), base);
    i->finish();
  }
  if (auto a = r.child("assumptions")) {
    a->number("r", c.r_floor);
    a->number("r1", c.r1);
    a->finish();
  }
  if (auto s = r.child("simulate")) {
    s->boolean("write_trajectory", c.simulate.write_trajectory);
    s->boolean("write_checkpoint", c.simulate.write_checkpoint);
    s->number("mass_tolerance", c.simulate.mass_tolerance);
    s->finish();
  }
  if (auto p = r.child("positivity")) {
    p->integer("draws", c.positivity.draws);
    p->number("T", c.positivity.T);
    p->number("dt", c.positivity.dt);
    p->number("coefficient_max", c.positivity.coefficient_max);
    p->number("data_max", c.positivity.data_max);
    p->integer("qp_samples", c.positivity.qp_samples);
    p->number("min_tolerance", c.positivity.min_tolerance);
    p->finish();
  }
  if (auto k = r.child("carleman")) {
    k->numbers("lambda", c.carleman.lambdas);
    k->numbers("s_multipliers", c.carleman.s_multipliers);
    k->numbers("tau", c.carleman.taus);
    k->number("epsilon", c.carleman.epsilon);
    k->number("lambda1", c.carleman.lambda1);
    k->integer("time_intervals", c.carleman.time_intervals);
    k->number("growth_limit", c.carleman.growth_limit);
    k->number("decomposition_tolerance", c.carleman.decomposition_tolerance);
    k->integer("spd_samples", c.carleman.spd_samples);
    k->number("spd_tolerance", c.carleman.spd_tolerance);
    k->finish();
  }
  if (auto g = r.child("gradcheck")) {
    g->integer("points", c.gradcheck.points);
    g->integer("directions", c.gradcheck.directions);
    g->number("h", c.gradcheck.h);
    g->number("spread", c.gradcheck.spread);
    g->number("tolerance", c.gradcheck.tolerance);
    g->finish();
  }
  if (auto v = r.child("inverse")) {
    if (auto p = v->child("patches")) {
      p->integer("radial", c.inverse.radial);
      p->integer("angular", c.inverse.angular);
      p->integer("arcs", c.inverse.arcs);
      p->finish();
    }
    v->strings("unknowns", c.inverse.unknowns);
    for (const auto& u : c.inverse.unknowns)
      require(u == "p13" || u == "p21" || u == "q13" || u == "q21",
              v->key("unknowns") + ": unknown block '" + u + "' (p13, p21, q13, q21)");
    for (auto [name, blocks] : {std::pair{"truth", c.inverse.truth},
                                {"initial_guess", c.inverse.initial_guess}})
      if (auto t = v->child(name))
        for (int b = 0; b < 4; ++b)
          if (t->has(kBlocks[b]))
            blocks[b] = parse_block(t->raw(kBlocks[b]), t->key(kBlocks[b]), base);
    // finish() for the nested truth/initial_guess objects happens implicitly:
    // any key other than the four blocks is reported below.
    for (const char* name : {"truth", "initial_guess"})
      if (v->has(name)) {
        Reader t(v->raw(name), v->key(name));
        for (const char* b : kBlocks) t.has(b);
        t.finish();
      }
    v->number("reg_weight", c.inverse.reg_weight);
    v->numbers("reg_sweep", c.inverse.reg_sweep);
    v->number("noise_level", c.inverse.noise_level);
    v->number("error_tolerance", c.inverse.error_tolerance);
    if (auto o = v->child("optimizer")) {
      o->integer("max_iter", c.inverse.optimizer.max_iter);
      o->number("tolerance", c.inverse.optimizer.tolerance);
      o->number("rel_tolerance", c.inverse.optimizer.rel_tolerance);
      o->integer("memory", c.inverse.optimizer.memory);
      o->integer("max_backtracks", c.inverse.optimizer.max_backtracks);
      o->boolean("gauss_newton_seed", c.inverse.optimizer.gauss_newton_seed);
      o->integer("gauss_newton_refresh", c.inverse.optimizer.gauss_newton_refresh);
      o->finish();
    }
    v->finish();
  }
  if (auto s = r.child("stability")) {
    s->integer("draws", c.stability.draws);
    s->number("scale", c.stability.scale);
    std::string mode = mode_name(c.stability.mode);
    s->string("mode", mode);
    if (mode == "forward_from_theta")
      c.stability.mode = StabilityMode::forward_from_theta;
    else if (mode == "full_window_regularized")
      c.stability.mode = StabilityMode::full_window_regularized;
    else
      throw ValidationError(s->key("mode") + ": expected forward_from_theta or full_window_regularized");
    s->number("damping_cap", c.stability.damping_cap);
    s->number("spread_limit", c.stability.spread_limit);
    s->number("linear_tolerance", c.stability.linear_tolerance);
    s->number("midtime_constant", c.stability.midtime_constant);
    s->finish();
  }
  r.finish();
  c.validate();
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("--config: file not found: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ValidationError("--config: " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j, path.has_parent_path() ? path.parent_path() : fs::path("."));
}

json RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["threads"] = threads;
  j["mesh"] = {{"n_r", n_r}, {"n_theta", n_theta}, {"radius", radius}};
  j["regions"] = {{"rho_prime", rho_prime}, {"rho_dprime", rho_dprime},
                  {"rho_omega", rho_omega}, {"t0", t0}, {"t1", t1}};
  j["solver"] = {{"dt", dt}, {"T", T}};
  j["diffusion"] = {{"a1", a1.to_json()}, {"a2", a2.to_json()}, {"d1", d1.to_json()},
                    {"d2", d2.to_json()}, {"beta", beta}, {"beta_gamma", beta_gamma}};
  j["potentials"] = {{"p11", p11.to_json()}, {"p12", p12.to_json()}, {"p13", p13.to_json()},
                     {"p21", p21.to_json()}, {"p22", p22.to_json()}, {"q11", q11.to_json()},
                     {"q12", q12.to_json()}, {"q13", q13.to_json()}, {"q21", q21.to_json()},
                     {"q22", q22.to_json()}, {"R_bound", R_bound}, {"p0", p0}};
  auto nl = [](const NonlinearitySpec& n) {
    return json{{"d", n.d}, {"delta", n.delta}, {"y_max", n.y_max}, {"z_max", n.z_max}};
  };
  j["nonlinearity"] = {{"f", nl(f)}, {"g", nl(g)}};
  j["initial"] = {{"y", init_y.to_json()}, {"z", init_z.to_json()}};
  if (init_y_gamma) j["initial"]["y_gamma"] = init_y_gamma->to_json();
  if (init_z_gamma) j["initial"]["z_gamma"] = init_z_gamma->to_json();
  j["assumptions"] = {{"r", r_floor}, {"r1", r1}};
  j["simulate"] = {{"write_trajectory", simulate.write_trajectory},
                   {"write_checkpoint", simulate.write_checkpoint},
                   {"mass_tolerance", simulate.mass_tolerance}};
  j["positivity"] = {{"draws", positivity.draws},
                     {"T", positivity.T},
                     {"dt", positivity.dt},
                     {"coefficient_max", positivity.coefficient_max},
                     {"data_max", positivity.data_max},
                     {"qp_samples", positivity.qp_samples},
                     {"min_tolerance", positivity.min_tolerance}};
  j["carleman"] = {{"lambda", carleman.lambdas},
                   {"s_multipliers", carleman.s_multipliers},
                   {"tau", carleman.taus},
                   {"epsilon", carleman.epsilon},
                   {"lambda1", carleman.lambda1},
                   {"time_intervals", carleman.time_intervals},
                   {"growth_limit", carleman.growth_limit},
                   {"decomposition_tolerance", carleman.decomposition_tolerance},
                   {"spd_samples", carleman.spd_samples},
                   {"spd_tolerance", carleman.spd_tolerance}};
  j["gradcheck"] = {{"points", gradcheck.points},   {"directions", gradcheck.directions},
                    {"h", gradcheck.h},             {"spread", gradcheck.spread},
                    {"tolerance", gradcheck.tolerance}};
  // Blocks without an entry follow the potentials (truth) or are unused (guess).
  json truth_j = json::object(), guess_j = json::object();
  for (int b = 0; b < 4; ++b) {
    if (const json t = block_json(inverse.truth[b]); !t.is_null()) truth_j[kBlocks[b]] = t;
    if (const json g = block_json(inverse.initial_guess[b]); !g.is_null())
      guess_j[kBlocks[b]] = g;
  }
  const auto& o = inverse.optimizer;
  j["inverse"] = {{"patches", {{"radial", inverse.radial}, {"angular", inverse.angular},
                               {"arcs", inverse.arcs}}},
                  {"unknowns", inverse.unknowns},
                  {"truth", truth_j},
                  {"initial_guess", guess_j},
                  {"reg_weight", inverse.reg_weight},
                  {"reg_sweep", inverse.reg_sweep},
                  {"noise_level", inverse.noise_level},
                  {"error_tolerance", inverse.error_tolerance},
                  {"optimizer",
                   {{"max_iter", o.max_iter},
                    {"tolerance", o.tolerance},
                    {"rel_tolerance", o.rel_tolerance},
                    {"memory", o.memory},
                    {"max_backtracks", o.max_backtracks},
                    {"gauss_newton_seed", o.gauss_newton_seed},
                    {"gauss_newton_refresh", o.gauss_newton_refresh}}}};
  j["stability"] = {{"draws", stability.draws},
                    {"scale", stability.scale},
                    {"mode", mode_name(stability.mode)},
                    {"damping_cap", stability.damping_cap},
                    {"spread_limit", stability.spread_limit},
                    {"linear_tolerance", stability.linear_tolerance},
                    {"midtime_constant", stability.midtime_constant}};
  return j;
}

// ---------------------------------------------------------------------------

Mesh RunConfig::mesh() const {
  require(radius == 1.0, "mesh.radius: the weight eta0 = 1 - |x|^2 requires the unit disk");
  return build_polar_mesh(n_r, n_theta, radius);
}

RegionSet RunConfig::regions(const Mesh& m) const {
  return build_regions(m, rho_prime, rho_dprime, rho_omega, t0, t1);
}

DiffusionSpec RunConfig::diffusion(const Mesh& m) const {
  DiffusionSpec d;
  d.a1 = a1.sample_bulk(m);
  d.a2 = a2.sample_bulk(m);
  d.d1 = d1.sample_surface(m);
  d.d2 = d2.sample_surface(m);
  d.beta = beta;
  d.beta_gamma = beta_gamma;
  d.validate(m);
  return d;
}

PotentialSet RunConfig::potentials(const Mesh& m) const {
  PotentialSet p = PotentialSet::zeros(m, R_bound, p0);
  p.p11 = p11.sample_bulk(m);
  p.p12 = p12.sample_bulk(m);
  p.p13 = p13.sample_bulk(m);
  p.p21 = p21.sample_bulk(m);
  p.p22 = p22.sample_bulk(m);
  p.q11 = q11.sample_surface(m);
  p.q12 = q12.sample_surface(m);
  p.q13 = q13.sample_surface(m);
  p.q21 = q21.sample_surface(m);
  p.q22 = q22.sample_surface(m);
  p.validate(m);
  return p;
}

InitialData RunConfig::initial(const Mesh& m) const {
  InitialData d;
  d.y0 = init_y.sample_bulk(m);
  d.z0 = init_z.sample_bulk(m);
  // Without explicit surface data the surface starts at the trace.
  auto surface = [&](const FieldSpec& bulk, const std::optional<FieldSpec>& s, const Field& cells) {
    if (s) return s->sample_surface(m);
    if (bulk.closed_form()) return bulk.sample_surface(m);
    Field out(m.n_surface());
    for (int j = 0; j < m.n_surface(); ++j) out[j] = cells[m.trace_map[j]];
    return out;
  };
  d.y0_gamma = surface(init_y, init_y_gamma, d.y0);
  d.z0_gamma = surface(init_z, init_z_gamma, d.z0);
  d.validate(m);
  return d;
}

int RunConfig::n_steps() const { return static_cast<int>(std::ceil(T / dt - 1e-9)); }

ModelSetup RunConfig::model() const {
  ModelSetup s;
  s.mesh = mesh();
  s.regions = regions(s.mesh);
  s.diffusion = diffusion(s.mesh);
  s.potentials = potentials(s.mesh);
  s.f = f.build();
  s.g = g.build();
  s.init = initial(s.mesh);
  s.dt = dt;
  s.n_steps = n_steps();
  s.r_floor = r_floor;
  s.r1 = r1;
  return s;
}

CarlemanConfig RunConfig::carleman_config() const {
  CarlemanConfig k;
  k.t0 = t0;
  k.t1 = t1;
  k.lambda = carleman.lambda1;
  k.lambda1 = carleman.lambda1;
  k.epsilon = carleman.epsilon;
  k.C0 = 2.0 * rho_prime;
  k.validate();
  return k;
}

InverseSetup RunConfig::inverse_setup() const {
  InverseSetup s;
  s.model = model();
  s.layout = PatchLayout::build(s.model.mesh, inverse.radial, inverse.angular, inverse.arcs);
  s.active = {false, false, false, false};
  for (const auto& u : inverse.unknowns) {
    if (u == "p13") s.active.p13 = true;
    if (u == "p21") s.active.p21 = true;
    if (u == "q13") s.active.q13 = true;
    if (u == "q21") s.active.q21 = true;
  }
  s.reg_weight = inverse.reg_weight;
  s.prior = initial_guess(s);
  return s;
}

CoefficientVector RunConfig::truth(const InverseSetup& s) const {
  CoefficientVector c;
  c.R_bound = R_bound;
  c.p0 = p0;
  const FieldSpec* base[4] = {&p13, &p21, &q13, &q21};
  Field* slots[4] = {&c.p13, &c.p21, &c.q13, &c.q21};
  for (int b = 0; b < 4; ++b)
    *slots[b] = block_values(inverse.truth[b], b < 2, s, *base[b],
                             std::string("inverse.truth.") + kBlocks[b]);
  return c;
}

CoefficientVector RunConfig::initial_guess(const InverseSetup& s) const {
  CoefficientVector c = truth(s);
  const bool active[4] = {s.active.p13, s.active.p21, s.active.q13, s.active.q21};
  Field* slots[4] = {&c.p13, &c.p21, &c.q13, &c.q21};
  for (int b = 0; b < 4; ++b) {
    if (!active[b]) continue;
    const BlockSpec& g = inverse.initial_guess[b];
    require(g.field || !g.values.empty(),
            std::string("inverse.initial_guess.") + kBlocks[b] + ": required for an unknown block");
    *slots[b] = block_values(g, b < 2, s, FieldSpec{},
                             std::string("inverse.initial_guess.") + kBlocks[b]);
  }
  return c;
}

void RunConfig::validate() const {
  require(threads >= 0, "threads: must be nonnegative");
  require(dt > 0.0, "solver.dt: must be positive");
  require(T > 0.0, "solver.T: must be positive");
  require(t1 <= T + 1e-12, "regions.t1: must not exceed solver.T");
  require(p0 >= 0.0, "potentials.p0: must be nonnegative");
  require(R_bound > 0.0, "potentials.R_bound: must be positive");
  require(positivity.draws >= 1, "positivity.draws: must be positive");
  require(positivity.dt > 0.0 && positivity.T > 0.0, "positivity.dt, positivity.T: must be positive");
  require(positivity.coefficient_max >= 0.0, "positivity.coefficient_max: must be nonnegative");
  require(positivity.data_max > 0.0, "positivity.data_max: must be positive");
  require(positivity.qp_samples >= 2, "positivity.qp_samples: must be at least 2");
  require(!carleman.lambdas.empty() && !carleman.s_multipliers.empty() && !carleman.taus.empty(),
          "carleman.lambda, carleman.s_multipliers, carleman.tau: must be nonempty");
  for (double l : carleman.lambdas) require(l > 0.0, "carleman.lambda: entries must be positive");
  for (double m : carleman.s_multipliers)
    require(m > 0.0, "carleman.s_multipliers: entries must be positive");
  require(carleman.epsilon > 0.0 && carleman.epsilon < 1.0, "carleman.epsilon: must lie in (0, 1)");
  require(carleman.time_intervals >= 4 && carleman.time_intervals % 2 == 0,
          "carleman.time_intervals: must be even and >= 4");
  require(gradcheck.points >= 1 && gradcheck.directions >= 1,
          "gradcheck.points, gradcheck.directions: must be positive");
  require(gradcheck.h > 0.0, "gradcheck.h: must be positive");
  require(inverse.noise_level >= 0.0, "inverse.noise_level: must be nonnegative");
  require(inverse.reg_weight >= 0.0, "inverse.reg_weight: must be nonnegative");
  for (double w : inverse.reg_sweep) require(w >= 0.0, "inverse.reg_sweep: entries must be nonnegative");
  require(!inverse.unknowns.empty(), "inverse.unknowns: at least one block is required");
  require(stability.draws >= 1, "stability.draws: must be positive");
  require(stability.scale >= 0.0, "stability.scale: must be nonnegative");
  require(stability.damping_cap > 1.0, "stability.damping_cap: must exceed 1");

  const ModelSetup m = model();
  // The implicit/explicit split must be stable for the configured data.
  ImexStepper probe(m.mesh, m.diffusion, m.potentials,
                    {std::make_shared<SemilinearTerms>(m.potentials.p13, m.potentials.q13, m.f, m.g)},
                    m.dt);
  (void)probe;
  carleman_config();
  // Shapes only; admissibility of the coefficients is a hypothesis checked
  // by the subcommands that rely on it.
  const InverseSetup s = inverse_setup();
  truth(s);
}

}  // namespace bulksurf
