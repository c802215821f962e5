// Acceptance runs A1-A10. One PASS/FAIL line per criterion; tolerances are pinned here.
// Usage: acceptance [A1 A2 ...]   (no arguments: all criteria)

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "cavity_spin/cavity_spin.hpp"

using namespace cavity_spin;

namespace {

// Energy slack constant. Refinement runs (8^3, 16^3, 32^3, t = 1) gave max (E + D)/E(0) - 1
// of -3.5e-5, -1.7e-5, -5.8e-6: never positive, so C is a frozen margin rather than a fit.
constexpr double kEnergyC = 1.0;

struct Line {
  bool pass = false;
  std::string detail;
};

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", x);
  return buf;
}

RunConfig small_data(int n, double a) {
  RunConfig c;
  c.extents = {1.0, 1.0, 1.0};
  c.cells = {n, n, n};
  c.offset = {0.05, 0.0, 0.0};
  c.body_mass = 1.0;
  c.inertia = Mat3::diagonal({0.1, 0.2, 0.3});
  c.law = {a, 2.0};
  c.visc = {1.0, 0.0};
  c.initial.kind = InitialKind::rigid_rotation;
  c.initial.density = 1.0;
  c.initial.omega0 = {0.2, 0.3, 3.0};
  c.initial.epsilon = 1e-2;
  c.initial.seed = 7;
  c.preset = "small data (empirically small)";
  return c;
}

// ---------------------------------------------------------------- A1 + A3

struct MassEnergyRun {
  double mass_err = 0.0;
  double energy_excess = 0.0;  ///< max (E + D) / E(0) - 1
  double h_plus_dt = 0.0;
  std::uint64_t steps = 0;
  std::uint64_t floors = 0;
};

MassEnergyRun mass_energy_run(int n, std::uint64_t steps) {
  RunConfig c = small_data(n, 100.0);
  const StepControl probe_ctrl = c.step_control();
  Solver probe(c.model());
  const CoupledState s0 = make_initial_state(c);
  const double dt = 0.9 * probe.cfl_dt(s0, probe_ctrl);
  c.dt_max = dt;
  c.t_end = dt * static_cast<double>(steps);
  c.output.interval = c.t_end / 100.0;
  const double m_F = c.fluid_mass();
  MassEnergyRun r;
  double E0 = -1.0;
  const RunResult run = run_in_memory(c, [&](const CoupledState& s, const RunStatus& st) {
    r.mass_err = std::max(r.mass_err, std::abs(total_mass(s.fluid.rho, c.grid()) - m_F) / m_F);
    const double E = total_energy(s, c.model(), c.initial.density);
    if (E0 < 0.0) E0 = E;
    r.energy_excess = std::max(r.energy_excess, (E + st.dissipation) / E0 - 1.0);
  });
  r.h_plus_dt = c.grid().min_spacing() + dt;
  r.steps = run.status.steps;
  r.floors = run.status.floor_hits;
  return r;
}

std::pair<Line, Line> a1_a3() {
  const MassEnergyRun r = mass_energy_run(16, 10000);
  Line a1{r.steps == 10000 && r.floors == 0 && r.mass_err <= 1e-12,
          "steps " + std::to_string(r.steps) + ", max |m - m_F|/m_F " + fmt(r.mass_err) + " (tol 1e-12)"};
  const double bound = kEnergyC * r.h_plus_dt;
  Line a3{r.energy_excess <= bound,
          "max (E + D)/E(0) - 1 = " + fmt(r.energy_excess) + " <= C (h + dt) = " + fmt(bound) + " (C = " +
              fmt(kEnergyC) + ")"};
  return {a1, a3};
}

// ---------------------------------------------------------------- A2

Line a2() {
  RunConfig c = small_data(8, 100.0);
  c.offset = {0.0, 0.0, 0.0};
  c.initial.omega0 = {3.0, 4.0, 10.0};
  c.t_end = 0.5;
  c.study.dt0 = 4e-4;
  c.study.dt_divisors = {1, 2, 4};
  std::ostringstream log;
  const StudyResult r = run_study(c, StudyKind::dt, log);
  std::string rows;
  for (const auto& row : r.rows) rows += " " + fmt(row.metric);
  return {r.order >= 1.8, "|M| drift" + rows + ", fitted order " + fmt(r.order) + " (>= 1.8)"};
}

// ---------------------------------------------------------------- A4

Line a4() {
  RunConfig c = small_data(16, 100.0);
  c.initial.omega0 = {0.0, 0.0, 0.0};
  c.initial.angular_momentum = Vec3{0.0, 0.0, 0.0};
  c.t_end = 2.0;
  c.output.interval = 0.02;
  c.certify.omega_tol = 1e-5;
  const CavityGrid grid = c.grid();
  OmegaLimitDetector detector(static_cast<std::size_t>(c.certify.omega_window), c.certify.omega_tol);
  double v0 = -1.0, v1 = 0.0;
  run_in_memory(c, [&](const CoupledState& s, const RunStatus&) {
    const double v = l2_norm(relative_velocity_field(s, grid), grid);
    if (v0 < 0.0) v0 = v;
    v1 = v;
    detector.push(v, s.fluid.rho, s.omega, s.xi);
  });
  const auto verdict = detector.verdict(grid, c.initial.density);
  std::vector<double> dev(verdict.rho.size());
  for (std::size_t i = 0; i < dev.size(); ++i) dev[i] = verdict.rho[i] - c.fluid_mass() / grid.volume();
  const double rho_err = l2_norm(dev, grid);
  const double tol = c.certify.omega_tol;
  const bool rest = norm(verdict.omega) <= tol && norm(verdict.xi) <= tol && rho_err <= tol;
  const double ratio = v1 / v0;
  return {verdict.converged && rest && ratio <= 1e-4,
          "spread " + fmt(verdict.spread) + ", |omega| " + fmt(norm(verdict.omega)) + ", |xi| " +
              fmt(norm(verdict.xi)) + ", |rho - m_F/|C|| " + fmt(rho_err) + " (tol 1e-5); |v| ratio " + fmt(ratio) +
              " (<= 1e-4)"};
}

// ---------------------------------------------------------------- A5 + A6

RunConfig steady_config(int n) {
  RunConfig c = small_data(n, 1e4);
  c.inertia = Mat3::diagonal({1.0, 2.0, 3.0}) * 0.1;
  c.steady.m0 = 10.0;
  c.steady.tol = 1e-12;
  c.steady.max_iter = 500;
  return c;
}

Line a5() {
  const RunConfig c = steady_config(16);
  double worst = 0.0;
  std::string per_axis;
  for (int axis = 0; axis < 3; ++axis) {
    RunConfig ca = c;
    ca.steady.axis_index = axis;
    const SteadyReport r = run_steady(ca, ca.grid());
    worst = std::max(worst, r.residual.max_scaled());
    per_axis += " axis " + std::to_string(axis) + ": " + fmt(r.residual.max_scaled()) + ";";
  }
  RunConfig c0 = c;
  c0.steady.m0 = 0.0;
  const SteadyReport z = run_steady(c0, c0.grid());
  const double rho_uniform = c0.fluid_mass() / c0.grid().volume();
  bool exact = z.state.omega == Vec3{} && z.state.xi == Vec3{};
  for (double r : z.state.rho) exact = exact && r == rho_uniform;
  return {worst <= 1e-10 && exact,
          "scaled residuals" + per_axis + " (tol 1e-10); M0 = 0 uniform state " + (exact ? "exact" : "NOT exact")};
}

Line a6() {
  RunConfig c = steady_config(8);
  c.steady.axis_index = 2;
  c.study.grid_sizes = {8, 16, 32};
  std::ostringstream log;
  const StudyResult r = run_study(c, StudyKind::grid, log);
  std::string rows;
  for (const auto& row : r.rows) rows += " " + fmt(row.metric);
  return {r.order >= 1.8, "max tendency" + rows + ", fitted order " + fmt(r.order) + " (>= 1.8)"};
}

// ---------------------------------------------------------------- A7

Line a7() {
  RunConfig c = small_data(16, 1e4);
  c.initial.omega0 = {1.5, 1.5, 15.0};
  c.t_end = 10.0;
  c.output.interval = 1.0;
  const RunResult run = run_in_memory(c, [](const CoupledState& s, const RunStatus&) {
    std::cerr << "  A7 t = " << s.t << " omega = (" << s.omega[0] << ", " << s.omega[1] << ", " << s.omega[2] << ")\n";
  });
  const CoupledState& s = run.final_state;
  const Model model = c.model();
  const CavityGrid grid = c.grid();
  const Mat3 I = total_inertia(model.body, s.fluid.rho, c.body_mass + c.fluid_mass());
  const double defect = alignment_defect(I, s.omega);
  const double M0 = norm(make_initial_state(c).M);
  const double ang = std::abs(norm(I * s.omega) - M0) / M0;

  SteadyOptions opt;
  opt.hint = s.omega;
  opt.initial_rho = s.fluid.rho;
  const SteadyState st = solve_steady(model.body, c.law, c.fluid_mass(), norm(s.M), 2, opt);
  double dev = 0.0, spread = 0.0;
  const double rho_bar = c.fluid_mass() / grid.volume();
  for (std::size_t i = 0; i < st.rho.size(); ++i) {
    dev = std::max(dev, std::abs(s.fluid.rho[i] - st.rho[i]));
    spread = std::max(spread, std::abs(st.rho[i] - rho_bar));
  }
  const double h = grid.min_spacing();
  const double rho_tol = h * h * spread;
  return {defect <= 1e-3 && ang <= 1e-3 && dev <= rho_tol && run.status.floor_hits == 0,
          "alignment " + fmt(defect) + " (<= 1e-3), ||I omega| - M0|/M0 " + fmt(ang) + " (<= 1e-3), |rho - rho_s| " +
              fmt(dev) + " (<= h^2 |rho_s - rho_bar| = " + fmt(rho_tol) + ")"};
}

// ---------------------------------------------------------------- A8

Line a8() {
  RunConfig c = small_data(16, 100.0);
  c.t_end = 0.2;
  c.reg.beta = 5.0;
  c.study.values = {1e-2, 1e-3, 1e-4};
  std::ostringstream log;
  const StudyResult rd = run_study(c, StudyKind::d, log);
  const StudyResult rb = run_study(c, StudyKind::b, log);
  std::string rows = "d:";
  for (const auto& row : rd.rows) rows += " " + fmt(row.metric);
  rows += "; b:";
  for (const auto& row : rb.rows) rows += " " + fmt(row.metric);
  return {rd.ok && rb.ok, "distance at t_end " + rows + " (non-increasing)"};
}

// ---------------------------------------------------------------- A9

// Centrifugally balanced density for omega0 on the fine grid. Uniform density at a = 100
// has an acoustic initial layer that the two resolutions resolve differently.
CoupledState prepared(const RunConfig& c) {
  const BodySpec body = c.model().body;
  const CavityGrid& g = body.cavity;
  const Vec3 w = c.initial.omega0;
  const double m_F = c.fluid_mass();
  SteadyState st;
  st.omega = w;
  st.rho = steady_profile(w, {}, detail::solve_profile_constant(w, {}, c.law, g, m_F), c.law, g);
  st.xi = cross(w, first_moment(st.rho, g)) * (-1.0 / (c.body_mass + m_F));
  CoupledState s = steady_to_state(st, body);
  refresh_kinematics(s, body);
  return s;
}

// Restriction of the fine data, with M chosen so that omega recovers to the fine value.
CoupledState coarsened(const CoupledState& f, const RunConfig& fine, const RunConfig& coarse) {
  CoupledState s = restrict_to_coarse(f, fine.grid(), coarse.grid());
  const CavityGrid g = coarse.grid();
  Vec3 ang;
  for (std::size_t i = 0; i < s.fluid.size(); ++i) ang += cross(g.center(i), s.fluid.q[i]) * g.cell_volume();
  s.M = coarse.inertia * f.omega + ang;
  refresh_kinematics(s, coarse.model().body);
  return s;
}

std::vector<CompareRow> pair_distance(int n_coarse, double t_end, double interval) {
  RunConfig coarse = small_data(n_coarse, 100.0);
  coarse.initial.epsilon = 0.0;
  coarse.t_end = t_end;
  coarse.output.interval = interval;
  RunConfig fine = coarse;
  fine.cells = {2 * n_coarse, 2 * n_coarse, 2 * n_coarse};
  const CoupledState f0 = prepared(fine);
  std::vector<CoupledState> a, b;
  run_in_memory(coarse, [&](const CoupledState& s, const RunStatus&) { a.push_back(s); }, coarsened(f0, fine, coarse));
  run_in_memory(fine, [&](const CoupledState& s, const RunStatus&) { b.push_back(s); }, f0);
  const Model model = coarse.model();
  std::vector<CompareRow> rows;
  for (std::size_t k = 0; k < std::min(a.size(), b.size()); ++k)
    rows.push_back({a[k].t, run_distance(a[k], coarse.grid(), b[k], fine.grid(), model)});
  return rows;
}

Line a9() {
  const double t_end = 0.5, interval = 0.05;
  const auto r8 = pair_distance(8, t_end, interval);
  const auto r16 = pair_distance(16, t_end, interval);
  const CompareResult c8 = assess_distances(r8, 1e-20), c16 = assess_distances(r16, 1e-20);
  bool shrinks = true;
  for (std::size_t k = 1; k < std::min(r8.size(), r16.size()); ++k)
    shrinks = shrinks && r16[k].distance < r8[k].distance;
  const bool zero = r8.front().distance <= 1e-20 && r16.front().distance <= 1e-20;
  return {zero && !c8.flagged && !c16.flagged && shrinks,
          "distance(0) " + fmt(r8.front().distance) + ", " + fmt(r16.front().distance) + " (<= 1e-20); distance(t_end) 8/16 " +
              fmt(r8.back().distance) + ", 16/32 " + fmt(r16.back().distance) + "; envelope " +
              (c8.flagged || c16.flagged ? "exceeded" : "holds") + (shrinks ? ", shrinks" : ", does NOT shrink") +
              " under refinement"};
}

// ---------------------------------------------------------------- A10

Line a10() {
  std::mt19937_64 gen(20261016);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const PressureLaw law{100.0, 2.0};
  // H >= 0 on random pairs
  bool h_ok = true;
  for (int i = 0; i < 10000; ++i) {
    const double rho = std::exp(8.0 * u(gen) - 4.0), r = std::exp(8.0 * u(gen) - 4.0);
    const double g = 1.0 + 4.0 * u(gen);
    h_ok = h_ok && entropy_H(PressureLaw{1.0 + 99.0 * u(gen), g}, rho, r) >= 0.0;
  }
  // P^rho_bar >= 0 with its only root at rho_bar
  bool p_ok = helmholtz(law, 1.0, 1.0) == 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double rho = std::exp(8.0 * u(gen) - 4.0);
    p_ok = p_ok && (rho == 1.0 || helmholtz(law, 1.0, rho) > 0.0);
  }
  // S(skew) = 0 and S:G >= 0
  const ViscositySpec visc{1.0, 0.5};
  bool s_ok = true;
  for (int i = 0; i < 1000; ++i) {
    Mat3 G;
    for (int r = 0; r < 3; ++r)
      for (int k = 0; k < 3; ++k) G(r, k) = 2.0 * u(gen) - 1.0;
    const Mat3 W = 0.5 * (G - transpose(G));
    s_ok = s_ok && frobenius_norm(stress(W, visc)) <= 1e-15 && contract(stress(G, visc), G) >= -1e-14;
  }
  // eig3 reconstruction
  double eig_err = 0.0;
  for (int i = 0; i < 1000; ++i) {
    Mat3 A;
    for (int r = 0; r < 3; ++r)
      for (int k = r; k < 3; ++k) A(r, k) = A(k, r) = 2.0 * u(gen) - 1.0;
    const SymmetricEigen e = eig3_sym(A);
    const Mat3 R = e.vectors * Mat3::diagonal(e.values) * transpose(e.vectors);
    eig_err = std::max(eig_err, frobenius_norm(R - A) / frobenius_norm(A));
  }
  // checkpoint restart is bit-exact
  RunConfig c = small_data(8, 100.0);
  c.t_end = 0.2;
  c.output.interval = 0.1;
  std::vector<CoupledState> mid;
  std::vector<RunStatus> mid_status;
  const RunResult full = run_in_memory(c, [&](const CoupledState& s, const RunStatus& st) {
    mid.push_back(s);
    mid_status.push_back(st);
  });
  const auto path = std::filesystem::temp_directory_path() / "cavity_spin_acceptance.cspn";
  checkpoint_write(path, Checkpoint{config_hash(c), c.grid().cells(), mid[1], mid_status[1]});
  Checkpoint ck = checkpoint_read(path, config_hash(c));
  std::filesystem::remove(path);
  Solver solver(c.model());
  RunStatus st = ck.status;
  simulate(solver, ck.state, c.t_end, c.step_control(), c.output.interval, st, [](const auto&, const auto&) {},
           [&](const CoupledState& x) { return dissipation_rate(solver, x); });
  bool restart_ok = ck.state.fluid.rho == full.final_state.fluid.rho && ck.state.M == full.final_state.M &&
                    st.steps == full.status.steps && st.dissipation == full.status.dissipation;
  for (std::size_t i = 0; i < ck.state.fluid.size() && restart_ok; ++i)
    restart_ok = ck.state.fluid.q[i] == full.final_state.fluid.q[i];
  auto mark = [](bool b) { return b ? "ok" : "FAIL"; };
  return {h_ok && p_ok && s_ok && eig_err <= 1e-12 && restart_ok,
          std::string("H >= 0 ") + mark(h_ok) + ", P >= 0 " + mark(p_ok) + ", stress " + mark(s_ok) +
              ", eig3 reconstruction " + fmt(eig_err) + " (<= 1e-12), restart " + mark(restart_ok)};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<std::string> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(argv[i]);
  auto want = [&](const char* id) { return wanted.empty() || wanted.count(id) > 0; };

  std::map<std::string, Line> lines;
  std::map<std::string, double> seconds;
  auto timed = [&](const std::vector<std::string>& ids, const std::function<std::vector<Line>()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<Line> out;
    try {
      out = fn();
    } catch (const std::exception& e) {
      out.assign(ids.size(), Line{false, std::string("exception: ") + e.what()});
    }
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      lines[ids[i]] = out[i];
      seconds[ids[i]] = dt;
    }
  };

  if (want("A1") || want("A3"))
    timed({"A1", "A3"}, [] {
      auto [x, y] = a1_a3();
      return std::vector<Line>{x, y};
    });
  if (want("A2")) timed({"A2"}, [] { return std::vector<Line>{a2()}; });
  if (want("A4")) timed({"A4"}, [] { return std::vector<Line>{a4()}; });
  if (want("A5")) timed({"A5"}, [] { return std::vector<Line>{a5()}; });
  if (want("A6")) timed({"A6"}, [] { return std::vector<Line>{a6()}; });
  if (want("A7")) timed({"A7"}, [] { return std::vector<Line>{a7()}; });
  if (want("A8")) timed({"A8"}, [] { return std::vector<Line>{a8()}; });
  if (want("A9")) timed({"A9"}, [] { return std::vector<Line>{a9()}; });
  if (want("A10")) timed({"A10"}, [] { return std::vector<Line>{a10()}; });

  bool all = true;
  for (const char* id : {"A1", "A2", "A3", "A4", "A5", "A6", "A7", "A8", "A9", "A10"}) {
    if (!lines.count(id)) continue;
    const Line& l = lines[id];
    all = all && l.pass;
    std::printf("%-4s %s  %s  [%.1f s]\n", id, l.pass ? "PASS" : "FAIL", l.detail.c_str(), seconds[id]);
  }
  return all ? 0 : 1;
}
