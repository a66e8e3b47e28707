#include "bulksurf/forward.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <ostream>

#include "bulksurf/errors.hpp"

namespace bulksurf {

void ExplicitTerms::add_jacobian_transpose(const SystemState&, double, const SystemState&,
                                           SystemState&) const {
  throw ValidationError("explicit term has no Jacobian transpose");
}

SemilinearTerms::SemilinearTerms(Field p13, Field q13, Nonlinearity f, Nonlinearity g)
    : p13_(std::move(p13)), q13_(std::move(q13)), f_(std::move(f)), g_(std::move(g)) {}

void SemilinearTerms::add_rates(const SystemState& x, double, SystemState& out) const {
  for (Eigen::Index i = 0; i < x.y.size(); ++i) out.y[i] += p13_[i] * f_(x.y[i], x.z[i]);
  for (Eigen::Index j = 0; j < x.y_gamma.size(); ++j)
    out.y_gamma[j] += q13_[j] * g_(x.y_gamma[j], x.z_gamma[j]);
}

double SemilinearTerms::lipschitz_bound() const {
  const double pf = p13_.size() ? p13_.cwiseAbs().maxCoeff() : 0.0;
  const double qg = q13_.size() ? q13_.cwiseAbs().maxCoeff() : 0.0;
  return std::max(pf * f_.lipschitz_bound, qg * g_.lipschitz_bound);
}

void SemilinearTerms::add_jacobian_transpose(const SystemState& x, double, const SystemState& w,
                                             SystemState& out) const {
  for (Eigen::Index i = 0; i < x.y.size(); ++i) {
    const auto d = f_.partials(x.y[i], x.z[i]);
    out.y[i] += p13_[i] * d[0] * w.y[i];
    out.z[i] += p13_[i] * d[1] * w.y[i];
  }
  for (Eigen::Index j = 0; j < x.y_gamma.size(); ++j) {
    const auto d = g_.partials(x.y_gamma[j], x.z_gamma[j]);
    out.y_gamma[j] += q13_[j] * d[0] * w.y_gamma[j];
    out.z_gamma[j] += q13_[j] * d[1] * w.y_gamma[j];
  }
}

ClippedReactionTerms::ClippedReactionTerms(Nonlinearity f1, Nonlinearity f2, Nonlinearity g1,
                                           Nonlinearity g2)
    : f1_(std::move(f1)), f2_(std::move(f2)), g1_(std::move(g1)), g2_(std::move(g2)) {}

void ClippedReactionTerms::add_rates(const SystemState& x, double, SystemState& out) const {
  auto pos = [](double v) { return v > 0.0 ? v : 0.0; };
  for (Eigen::Index i = 0; i < x.y.size(); ++i) {
    const double u = pos(x.y[i]), v = pos(x.z[i]);
    out.y[i] += f1_(u, v);
    out.z[i] += f2_(u, v);
  }
  for (Eigen::Index j = 0; j < x.y_gamma.size(); ++j) {
    const double u = pos(x.y_gamma[j]), v = pos(x.z_gamma[j]);
    out.y_gamma[j] += g1_(u, v);
    out.z_gamma[j] += g2_(u, v);
  }
}

double ClippedReactionTerms::lipschitz_bound() const {
  return std::max({f1_.lipschitz_bound, f2_.lipschitz_bound, g1_.lipschitz_bound,
                   g2_.lipschitz_bound});
}

SourceTerms::SourceTerms(Callback add_sources) : add_(std::move(add_sources)) {}

void SourceTerms::add_rates(const SystemState&, double t, SystemState& out) const { add_(t, out); }

// ---------------------------------------------------------------------------

ImexStepper::ImexStepper(const Mesh& mesh, const DiffusionSpec& diffusion,
                         const PotentialSet& pot, TermList terms, double dt)
    : mesh_(&mesh), dt_(dt), terms_(std::move(terms)) {
  require(dt > 0.0 && std::isfinite(dt), "solver.dt must be positive");
  diffusion.validate(mesh);
  pot.validate(mesh);

  double lip = pot.linear_sup_norm();
  for (const auto& t : terms_) lip = std::max(lip, t->lipschitz_bound());
  dt_max_ = lip > 0.0 ? 0.5 / lip : std::numeric_limits<double>::infinity();
  require(dt <= dt_max_ * (1.0 + 1e-12), "solver.dt = " + std::to_string(dt) +
                                             " exceeds the stability bound dt_max = " +
                                             std::to_string(dt_max_));

  bulk1_ = assemble_bulk_diffusion(mesh, diffusion.a1);
  bulk2_ = assemble_bulk_diffusion(mesh, diffusion.a2);
  surf1_ = assemble_surface_diffusion(mesh, diffusion.d1);
  surf2_ = assemble_surface_diffusion(mesh, diffusion.d2);

  const int nb = mesh.n_bulk(), ns = mesh.n_surface();
  const int half = nb + ns;
  const int n = 2 * half;
  mass_.resize(n);
  mass_ << mesh.cell_areas, mesh.surface_weights, mesh.cell_areas, mesh.surface_weights;

  std::vector<Eigen::Triplet<double>> trip;
  auto add_sparse = [&](const SparseMatrix& m, int r0, int c0) {
    for (int k = 0; k < m.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(m, k); it; ++it)
        trip.emplace_back(r0 + it.row(), c0 + it.col(), it.value());
  };
  add_sparse(bulk1_.stiffness, 0, 0);
  add_sparse(surf1_.stiffness, nb, nb);
  add_sparse(bulk2_.stiffness, half, half);
  add_sparse(surf2_.stiffness, half + nb, half + nb);

  // M P: rows y, y_G, z, z_G.
  for (int c = 0; c < nb; ++c) {
    const double m = mesh.cell_areas[c];
    trip.emplace_back(c, c, m * pot.p11[c]);
    trip.emplace_back(c, half + c, m * pot.p12[c]);
    trip.emplace_back(half + c, c, m * pot.p21[c]);
    trip.emplace_back(half + c, half + c, m * pot.p22[c]);
  }
  for (int j = 0; j < ns; ++j) {
    const double m = mesh.surface_weights[j];
    trip.emplace_back(nb + j, nb + j, m * pot.q11[j]);
    trip.emplace_back(nb + j, half + nb + j, m * pot.q12[j]);
    trip.emplace_back(half + nb + j, nb + j, m * pot.q21[j]);
    trip.emplace_back(half + nb + j, half + nb + j, m * pot.q22[j]);
  }
  generator_.resize(n, n);
  generator_.setFromTriplets(trip.begin(), trip.end());
  generator_.prune(0.0);
  generator_.makeCompressed();

  SparseMatrix mdiag(n, n);
  mdiag.setIdentity();
  mdiag = mdiag * mass_.asDiagonal();
  system_ = mdiag - dt_ * generator_;
  system_.makeCompressed();
  lu_.analyzePattern(system_);
  lu_.factorize(system_);
  if (lu_.info() != Eigen::Success)
    throw NumericalError("implicit system factorization failed: " + lu_.lastErrorMessage());
}

Field ImexStepper::pack(const SystemState& x) const {
  Field v(dimension());
  v << x.y, x.y_gamma, x.z, x.z_gamma;
  return v;
}

SystemState ImexStepper::unpack(const Field& v, double t) const {
  const int nb = mesh_->n_bulk(), ns = mesh_->n_surface();
  SystemState s;
  s.y = v.segment(0, nb);
  s.y_gamma = v.segment(nb, ns);
  s.z = v.segment(nb + ns, nb);
  s.z_gamma = v.segment(2 * nb + ns, ns);
  s.t = t;
  return s;
}

Field ImexStepper::explicit_rates(const SystemState& x, double t) const {
  SystemState r = SystemState::zeros(*mesh_, t);
  for (const auto& term : terms_) term->add_rates(x, t, r);
  return pack(r);
}

Field ImexStepper::explicit_jacobian_transpose(const SystemState& x, double t,
                                               const Field& w) const {
  const SystemState ws = unpack(w, t);
  SystemState r = SystemState::zeros(*mesh_, t);
  for (const auto& term : terms_) term->add_jacobian_transpose(x, t, ws, r);
  return pack(r);
}

SystemState ImexStepper::step(const SystemState& x) const {
  Field rhs = pack(x);
  if (!terms_.empty()) rhs += dt_ * explicit_rates(x, x.t);
  rhs = rhs.cwiseProduct(mass_);
  Field next = lu_.solve(rhs);
  if (lu_.info() != Eigen::Success) throw NumericalError("implicit solve failed");
  return unpack(next, x.t + dt_);
}

Trajectory ImexStepper::solve_steps(const SystemState& init, int n_steps) const {
  require(init.matches(*mesh_), "initial state does not match the mesh");
  Trajectory traj;
  traj.dt = dt_;
  traj.states.reserve(n_steps + 1);
  traj.states.push_back(init);
  for (int n = 0; n < n_steps; ++n) {
    SystemState next = step(traj.states.back());
    // Anchor times to the grid to avoid drift from repeated addition.
    next.t = init.t + (n + 1) * dt_;
    if (!next.is_finite())
      throw NumericalError("non-finite state at step " + std::to_string(n + 1) +
                           " (t = " + std::to_string(next.t) + ")");
    traj.states.push_back(std::move(next));
  }
  return traj;
}

Trajectory ImexStepper::solve(const SystemState& init, double T_end) const {
  require(T_end >= 0.0, "solver.T must be nonnegative");
  const int n = static_cast<int>(std::ceil(T_end / dt_ - 1e-9));
  return solve_steps(init, std::max(n, 0));
}

Field ImexStepper::solve_transpose(const Field& b) const {
  std::call_once(transpose_once_, [this] {
    lu_t_ = std::make_unique<Eigen::SparseLU<SparseMatrix>>();
    SparseMatrix st = system_.transpose();
    st.makeCompressed();
    lu_t_->compute(st);
    if (lu_t_->info() != Eigen::Success)
      throw NumericalError("transposed system factorization failed");
  });
  return lu_t_->solve(b);
}

double ImexStepper::max_offdiagonal() const {
  double m = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < system_.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(system_, k); it; ++it)
      if (it.row() != it.col()) m = std::max(m, it.value());
  return m;
}

// ---------------------------------------------------------------------------

double ObservationRecord::squared_norm() const {
  double s = 0.0;
  for (Eigen::Index r = 0; r < values.rows(); ++r)
    s += (values.row(r).transpose().array().square() * cell_weights.array()).sum();
  return s;
}

double ObservationRecord::norm() const { return std::sqrt(squared_norm()); }

ObservationRecord ObservationRecord::operator-(const ObservationRecord& o) const {
  require(cells == o.cells && time_nodes == o.time_nodes,
          "observation records have different supports");
  ObservationRecord r = *this;
  r.values -= o.values;
  return r;
}

ObservationRecord observe_window(const Trajectory& traj, const Mesh& mesh,
                                 const std::vector<int>& cells, double t_lo, double t_hi) {
  require(traj.size() >= 3, "observe: trajectory needs at least three states");
  const double eps = 1e-9 * traj.dt;
  require(t_lo >= traj.t_begin() - eps && t_hi <= traj.t_end() + eps,
          "observe: window (" + std::to_string(t_lo) + ", " + std::to_string(t_hi) +
              ") lies outside the trajectory");
  ObservationRecord rec;
  rec.cells = cells;
  rec.cell_weights.resize(cells.size());
  for (std::size_t k = 0; k < cells.size(); ++k)
    rec.cell_weights[k] = mesh.cell_areas[cells[k]] * traj.dt;
  for (std::size_t n = 1; n + 1 < traj.size(); ++n) {
    const double t = traj.time(n);
    if (t > t_lo + eps && t < t_hi - eps) {
      rec.time_nodes.push_back(static_cast<int>(n));
      rec.times.push_back(t);
    }
  }
  rec.values.resize(rec.time_nodes.size(), cells.size());
  for (std::size_t r = 0; r < rec.time_nodes.size(); ++r) {
    const int n = rec.time_nodes[r];
    const Field& zp = traj.states[n + 1].z;
    const Field& zm = traj.states[n - 1].z;
    for (std::size_t k = 0; k < cells.size(); ++k)
      rec.values(r, k) = (zp[cells[k]] - zm[cells[k]]) / (2.0 * traj.dt);
  }
  return rec;
}

ObservationRecord observe(const Trajectory& traj, const Mesh& mesh, const RegionSet& regions) {
  return observe_window(traj, mesh, regions.omega, regions.t0, regions.t1);
}

double total_mass(const Mesh& mesh, const SystemState& x) {
  return mesh.cell_areas.dot(x.y + x.z) + mesh.surface_weights.dot(x.y_gamma + x.z_gamma);
}

double state_norm(const Mesh& mesh, const SystemState& x) {
  const double b = (mesh.cell_areas.array() * (x.y.array().square() + x.z.array().square())).sum();
  const double s = (mesh.surface_weights.array() *
                    (x.y_gamma.array().square() + x.z_gamma.array().square()))
                       .sum();
  return std::sqrt(b + s);
}

// ---------------------------------------------------------------------------

namespace {

Jet eval_at(const std::function<Jet(const JetPoint&)>& fn, double t, const Point& x) {
  return fn(JetPoint(t, x[0], x[1]));
}

}  // namespace

ManufacturedProblem ManufacturedProblem::standard() {
  ManufacturedProblem p;
  p.y = [](const JetPoint& q) {
    return exp(-q.t) * (Jet(1.0) - q.x1 * q.x1 - q.x2 * q.x2) + Jet(1.0);
  };
  p.z = [](const JetPoint& q) { return cos(q.t) * (Jet(1.0) + q.x1 * q.x2) + Jet(1.0); };
  p.a1 = [](const JetPoint& q) { return Jet(1.0) + 0.25 * (q.x1 * q.x1 + q.x2 * q.x2); };
  p.a2 = [](const JetPoint& q) { return Jet(1.5) + 0.2 * q.x1; };
  p.d1 = [](const JetPoint& q) { return Jet(1.0) + 0.3 * q.x2 * q.x2; };
  p.d2 = [](const JetPoint& q) { return Jet(1.2) + 0.1 * q.x1; };
  p.p11 = -0.5; p.p12 = 0.3; p.p21 = 0.8; p.p22 = -0.2;
  p.q11 = -0.3; p.q12 = 0.2; p.q21 = 0.5; p.q22 = -0.1;
  p.p13 = 0.5; p.q13 = 0.3;
  p.f = make_power_nonlinearity(1, 1, 3.0, 3.0);
  p.g = make_power_nonlinearity(2, 0, 3.0, 3.0);
  return p;
}

ManufacturedProblem ManufacturedProblem::affine_in_time() {
  ManufacturedProblem p;
  p.y = [](const JetPoint& q) { return Jet(1.0) + q.t; };
  p.z = [](const JetPoint& q) { return Jet(2.0) - 0.5 * q.t; };
  p.a1 = p.a2 = p.d1 = p.d2 = [](const JetPoint&) { return Jet(1.0); };
  p.f = zero_nonlinearity();
  p.g = zero_nonlinearity();
  return p;
}

SystemState ManufacturedProblem::exact(const Mesh& mesh, double t) const {
  SystemState s;
  auto at = [&](const std::function<Jet(const JetPoint&)>& fn) {
    return [&, t](const Point& x) { return eval_at(fn, t, x).v; };
  };
  s.y = mesh.sample_bulk(at(y));
  s.z = mesh.sample_bulk(at(z));
  s.y_gamma = mesh.sample_surface(at(y));
  s.z_gamma = mesh.sample_surface(at(z));
  s.t = t;
  return s;
}

DiffusionSpec ManufacturedProblem::diffusion(const Mesh& mesh) const {
  auto at = [](const std::function<Jet(const JetPoint&)>& fn) {
    return [&fn](const Point& x) { return eval_at(fn, 0.0, x).v; };
  };
  DiffusionSpec d;
  d.a1 = mesh.sample_bulk(at(a1));
  d.a2 = mesh.sample_bulk(at(a2));
  d.d1 = mesh.sample_surface(at(d1));
  d.d2 = mesh.sample_surface(at(d2));
  d.beta = std::min(d.a1.minCoeff(), d.a2.minCoeff());
  d.beta_gamma = std::min(d.d1.minCoeff(), d.d2.minCoeff());
  return d;
}

PotentialSet ManufacturedProblem::potentials(const Mesh& mesh) const {
  PotentialSet pot = PotentialSet::zeros(mesh, 10.0, 0.0);
  pot.p11.setConstant(p11); pot.p12.setConstant(p12);
  pot.p21.setConstant(p21); pot.p22.setConstant(p22);
  pot.p13.setConstant(p13);
  pot.q11.setConstant(q11); pot.q12.setConstant(q12);
  pot.q21.setConstant(q21); pot.q22.setConstant(q22);
  pot.q13.setConstant(q13);
  return pot;
}

TermList ManufacturedProblem::terms(const Mesh& mesh, const DiffusionSpec&) const {
  TermList out;
  out.push_back(std::make_shared<SemilinearTerms>(Field::Constant(mesh.n_bulk(), p13),
                                                  Field::Constant(mesh.n_surface(), q13), f, g));
  const ManufacturedProblem self = *this;
  const Mesh* m = &mesh;
  out.push_back(std::make_shared<SourceTerms>([self, m](double t, SystemState& r) {
    const Mesh& mesh = *m;
    for (int c = 0; c < mesh.n_bulk(); ++c) {
      const Point x = mesh.cell_center(c);
      const Jet y = eval_at(self.y, t, x), z = eval_at(self.z, t, x);
      const Jet a1 = eval_at(self.a1, t, x), a2 = eval_at(self.a2, t, x);
      r.y[c] += y.dt() - jet_divergence(a1, y) - self.p11 * y.v - self.p12 * z.v -
                self.p13 * self.f(y.v, z.v);
      r.z[c] += z.dt() - jet_divergence(a2, z) - self.p21 * y.v - self.p22 * z.v;
    }
    for (int j = 0; j < mesh.n_surface(); ++j) {
      const Point x = mesh.surface_point(j);
      const Point nu = mesh.outward_normal[j];
      const Jet y = eval_at(self.y, t, x), z = eval_at(self.z, t, x);
      const Jet a1 = eval_at(self.a1, t, x), a2 = eval_at(self.a2, t, x);
      const Jet d1 = eval_at(self.d1, t, x), d2 = eval_at(self.d2, t, x);
      r.y_gamma[j] += y.dt() - jet_surface_divergence(d1, y, nu, mesh.radius) +
                      a1.v * y.grad().dot(nu) - self.q11 * y.v - self.q12 * z.v -
                      self.q13 * self.g(y.v, z.v);
      r.z_gamma[j] += z.dt() - jet_surface_divergence(d2, z, nu, mesh.radius) +
                      a2.v * z.grad().dot(nu) - self.q21 * y.v - self.q22 * z.v;
    }
  }));
  return out;
}

ConvergenceTable mms_spatial_convergence(const ManufacturedProblem& prob,
                                         const std::vector<ConvergenceLevel>& levels, double T) {
  require(levels.size() >= 2, "convergence study needs at least two levels");
  ConvergenceTable table;
  for (const ConvergenceLevel& lv : levels) {
    const Mesh mesh = build_polar_mesh(lv.n_r, lv.n_theta);
    const DiffusionSpec diff = prob.diffusion(mesh);
    const ImexStepper stepper(mesh, diff, prob.potentials(mesh), prob.terms(mesh, diff), lv.dt);
    const Trajectory traj = stepper.solve(prob.exact(mesh, 0.0), T);
    SystemState err = traj.states.back();
    err -= prob.exact(mesh, traj.t_end());
    ConvergenceLevel out = lv;
    out.error = state_norm(mesh, err);
    if (!table.levels.empty()) {
      const ConvergenceLevel& prev = table.levels.back();
      out.order = std::log(prev.error / out.error) /
                  std::log(static_cast<double>(lv.n_r) / prev.n_r);
    }
    table.levels.push_back(out);
  }
  return table;
}

ConvergenceTable mms_temporal_convergence(const ManufacturedProblem& prob, int n_r, int n_theta,
                                          const std::vector<double>& dts, double T) {
  require(dts.size() >= 2, "convergence study needs at least two time steps");
  const Mesh mesh = build_polar_mesh(n_r, n_theta);
  const DiffusionSpec diff = prob.diffusion(mesh);
  const PotentialSet pot = prob.potentials(mesh);
  const TermList terms = prob.terms(mesh, diff);
  const SystemState init = prob.exact(mesh, 0.0);

  auto run = [&](double dt) {
    const ImexStepper st(mesh, diff, pot, terms, dt);
    return st.solve(init, T).states.back();
  };
  const double dt_ref = *std::min_element(dts.begin(), dts.end()) / 8.0;
  const SystemState ref = run(dt_ref);

  ConvergenceTable table;
  for (double dt : dts) {
    SystemState err = run(dt);
    err -= ref;
    ConvergenceLevel lv{n_r, n_theta, dt, state_norm(mesh, err), 0.0};
    if (!table.levels.empty()) {
      const ConvergenceLevel& prev = table.levels.back();
      lv.order = std::log(prev.error / lv.error) / std::log(prev.dt / dt);
    }
    table.levels.push_back(lv);
  }
  return table;
}

// ---------------------------------------------------------------------------

void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  char buf[160];
  os << "step,t,kind,index,y,z\n";
  for (std::size_t n = 0; n < traj.size(); ++n) {
    const SystemState& s = traj.states[n];
    for (Eigen::Index c = 0; c < s.y.size(); ++c) {
      std::snprintf(buf, sizeof buf, "%zu,%.17g,bulk,%ld,%.17g,%.17g\n", n, s.t,
                    static_cast<long>(c), s.y[c], s.z[c]);
      os << buf;
    }
    for (Eigen::Index j = 0; j < s.y_gamma.size(); ++j) {
      std::snprintf(buf, sizeof buf, "%zu,%.17g,surface,%ld,%.17g,%.17g\n", n, s.t,
                    static_cast<long>(j), s.y_gamma[j], s.z_gamma[j]);
      os << buf;
    }
  }
}

namespace {
constexpr char kMagic[8] = {'B', 'S', 'T', 'R', 'A', 'J', '0', '1'};
}

void write_trajectory_binary(const std::string& path, const Trajectory& traj) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), "cannot open checkpoint file '" + path + "' for writing");
  const std::int64_t n = static_cast<std::int64_t>(traj.size());
  const std::int64_t nb = n ? traj.states[0].y.size() : 0;
  const std::int64_t ns = n ? traj.states[0].y_gamma.size() : 0;
  os.write(kMagic, sizeof kMagic);
  os.write(reinterpret_cast<const char*>(&n), sizeof n);
  os.write(reinterpret_cast<const char*>(&nb), sizeof nb);
  os.write(reinterpret_cast<const char*>(&ns), sizeof ns);
  os.write(reinterpret_cast<const char*>(&traj.dt), sizeof traj.dt);
  for (const SystemState& s : traj.states) {
    os.write(reinterpret_cast<const char*>(&s.t), sizeof s.t);
    for (const Field* f : {&s.y, &s.z, &s.y_gamma, &s.z_gamma})
      os.write(reinterpret_cast<const char*>(f->data()), f->size() * sizeof(double));
  }
  if (!os) throw NumericalError("checkpoint write failed: " + path);
}

Trajectory read_trajectory_binary(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), "cannot open checkpoint file '" + path + "'");
  char magic[8];
  is.read(magic, sizeof magic);
  require(is && std::memcmp(magic, kMagic, sizeof kMagic) == 0,
          "'" + path + "' is not a trajectory checkpoint");
  std::int64_t n = 0, nb = 0, ns = 0;
  Trajectory traj;
  is.read(reinterpret_cast<char*>(&n), sizeof n);
  is.read(reinterpret_cast<char*>(&nb), sizeof nb);
  is.read(reinterpret_cast<char*>(&ns), sizeof ns);
  is.read(reinterpret_cast<char*>(&traj.dt), sizeof traj.dt);
  require(is && n >= 0 && nb >= 0 && ns >= 0, "corrupt checkpoint header: " + path);
  traj.states.resize(n);
  for (SystemState& s : traj.states) {
    is.read(reinterpret_cast<char*>(&s.t), sizeof s.t);
    s.y.resize(nb); s.z.resize(nb); s.y_gamma.resize(ns); s.z_gamma.resize(ns);
    for (Field* f : {&s.y, &s.z, &s.y_gamma, &s.z_gamma})
      is.read(reinterpret_cast<char*>(f->data()), f->size() * sizeof(double));
  }
  require(static_cast<bool>(is), "truncated checkpoint: " + path);
  return traj;
}

}  // namespace bulksurf
