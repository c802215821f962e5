#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cavity_spin/config.hpp"
#include "cavity_spin/diagnostics.hpp"
#include "cavity_spin/dynamics.hpp"
#include "cavity_spin/errors.hpp"
#include "cavity_spin/initial.hpp"
#include "cavity_spin/io.hpp"
#include "cavity_spin/steady.hpp"

namespace cavity_spin {

enum ExitCode : int { exit_ok = 0, exit_usage = 1, exit_violation = 2, exit_numerical = 3 };

/// Least-squares slope of log(y) against log(x).
inline double fitted_order(const std::vector<double>& x, const std::vector<double>& y) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

struct Envelope {
  double c1 = 0.0, c2 = 0.0;
  double operator()(double t) const { return c1 * std::exp(c2 * t); }
};

/// Fits c1 exp(c2 t) to the positive points by least squares in log space.
inline Envelope fit_envelope(const std::vector<double>& t, const std::vector<double>& d) {
  std::vector<double> tt, ld;
  for (std::size_t i = 0; i < t.size(); ++i)
    if (d[i] > 0.0) {
      tt.push_back(t[i]);
      ld.push_back(std::log(d[i]));
    }
  Envelope e;
  if (tt.empty()) return e;
  if (tt.size() == 1) return {std::exp(ld[0]), 0.0};
  double st = 0, sl = 0, stt = 0, stl = 0;
  const double n = static_cast<double>(tt.size());
  for (std::size_t i = 0; i < tt.size(); ++i) {
    st += tt[i];
    sl += ld[i];
    stt += tt[i] * tt[i];
    stl += tt[i] * ld[i];
  }
  const double den = n * stt - st * st;
  e.c2 = den != 0.0 ? (n * stl - st * sl) / den : 0.0;
  e.c1 = std::exp((sl - e.c2 * st) / n);
  return e;
}

// ---------------------------------------------------------------- in-memory runs

struct RunResult {
  CoupledState final_state;
  RunStatus status;
  std::vector<DiagnosticsSample> samples;
  double max_dt = 0.0;
};

/// Runs cfg from its initial data without touching the file system.
/// `on_output` sees every output state.
inline RunResult run_in_memory(const RunConfig& cfg,
                               const std::function<void(const CoupledState&, const RunStatus&)>& on_output = {},
                               std::optional<CoupledState> initial = std::nullopt) {
  cfg.validate();
  Solver solver(cfg.model());
  RunResult r;
  CoupledState s = initial ? *initial : make_initial_state(cfg);
  const double rho_bar = cfg.initial.density;
  const StepControl ctrl = cfg.step_control();
  simulate(
      solver, s, cfg.t_end, ctrl, cfg.output.interval, r.status,
      [&](const CoupledState& x, const RunStatus& st) {
        Solver probe(cfg.model());
        r.samples.push_back(make_sample(probe, x, rho_bar));
        if (on_output) on_output(x, st);
      },
      [&](const CoupledState& x) {
        Solver probe(cfg.model());
        return dissipation_rate(probe, x);
      });
  r.final_state = s;
  return r;
}

// ---------------------------------------------------------------- certification

struct Certificate {
  bool ok = true;
  std::string invariant;
  std::string message;
};

/// Energy, mass and kinematic-constraint checks over a recorded series.
inline Certificate certify_series(const RunConfig& cfg, const std::vector<DiagnosticsSample>& rows,
                                  const std::vector<double>& dissipation, double dt_used, bool floor_hit) {
  Certificate c;
  if (rows.empty()) return c;
  const CavityGrid grid = cfg.grid();
  const double m0 = rows.front().mass;
  if (!floor_hit)
    for (const auto& r : rows)
      if (std::abs(r.mass - m0) > 1e-12 * m0) {
        std::ostringstream m;
        m << "relative mass drift " << std::abs(r.mass - m0) / m0 << " at t = " << r.t << " exceeds 1e-12";
        return {false, "dynamics.mass_conservation", m.str()};
      }
  const bool physical = cfg.reg.d == 0.0 && cfg.reg.b == 0.0;
  if (physical && dissipation.size() == rows.size()) {
    const double E0 = rows.front().energy;
    const double tol = cfg.certify.energy_c * (grid.min_spacing() + dt_used);
    for (std::size_t i = 0; i < rows.size(); ++i)
      if (rows[i].energy + dissipation[i] > E0 * (1.0 + tol)) {
        std::ostringstream m;
        m << "E + dissipation = " << rows[i].energy + dissipation[i] << " at t = " << rows[i].t
          << " exceeds E(0) (1 + C (h + dt)) = " << E0 * (1.0 + tol);
        return {false, "diagnostics.energy_inequality", m.str()};
      }
  }
  return c;
}

/// Relative size of the kinematic constraint defects of a state.
inline double constraint_defect(const CoupledState& s, const Model& model) {
  const CavityGrid& grid = model.grid();
  const double vol = grid.cell_volume();
  double qabs = 0.0, aabs = 0.0;
  Vec3 lin, ang;
  for (std::size_t c = 0; c < s.fluid.size(); ++c) {
    const Vec3 x = grid.center(c);
    lin += s.fluid.q[c] * vol;
    ang += cross(x, s.fluid.q[c]) * vol;
    qabs += norm(s.fluid.q[c]) * vol;
    aabs += norm(cross(x, s.fluid.q[c])) * vol;
  }
  const double e_xi = norm(model.body.mass * s.xi + lin) / std::max(qabs + model.body.mass * norm(s.xi), 1e-300);
  const double e_M = norm(s.M - model.body.inertia * s.omega - ang) /
                     std::max(norm(s.M) + norm(model.body.inertia * s.omega) + aabs, 1e-300);
  return std::max(e_xi, e_M);
}

// ---------------------------------------------------------------- commands

inline int report_error(const std::exception& e, std::ostream& err) {
  if (const auto* iv = dynamic_cast<const InvariantViolation*>(&e)) {
    err << "error: invariant " << iv->invariant() << " violated: " << e.what() << "\n";
    return exit_violation;
  }
  if (dynamic_cast<const NumericalError*>(&e)) {
    err << "error: numerical failure (dynamics.finite_state): " << e.what() << "\n";
    return exit_numerical;
  }
  if (const auto* ip = dynamic_cast<const InfeasibleProfile*>(&e)) {
    err << "error: steady.profile_feasible: " << ip->what() << "\n";
    return exit_violation;
  }
  if (const auto* ce = dynamic_cast<const ConvergenceError*>(&e)) {
    err << "error: steady.convergence: " << ce->what() << "\nchange history:";
    for (double h : ce->history()) err << " " << h;
    err << "\n";
    return exit_violation;
  }
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const DomainError*>(&e)) {
    err << "error: invalid configuration: " << e.what() << "\n";
    return exit_usage;
  }
  if (dynamic_cast<const FormatError*>(&e) || dynamic_cast<const IoError*>(&e)) {
    err << "error: " << e.what() << "\n";
    return exit_usage;
  }
  err << "error: " << e.what() << "\n";
  return exit_numerical;
}

inline int cmd_check(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  try {
    for (const auto& w : cfg.validate()) err << "warning: " << w << "\n";
    if (cfg.initial.kind == InitialKind::file && !std::filesystem::exists(cfg.initial.path))
      throw ConfigError("initial.path " + cfg.initial.path + " does not exist");
    out << "config ok (hash " << std::hex << std::setw(16) << std::setfill('0') << config_hash(cfg) << std::dec
        << std::setfill(' ') << ")\n";
    return exit_ok;
  } catch (const std::exception& e) {
    return report_error(e, err);
  }
}

namespace detail {
inline std::string numbered(const char* stem, std::uint64_t k, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%06llu%s", stem, static_cast<unsigned long long>(k), ext);
  return buf;
}

inline std::string hex64(std::uint64_t h) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << h;
  return s.str();
}
}  // namespace detail

/// simulate subcommand. Writes timeseries.csv, meta.json, fields_*.raw,
/// snapshot_*.csv and checkpoint_*.cspn into the output directory.
inline int cmd_simulate(const RunConfig& cfg, const std::optional<std::filesystem::path>& restart, std::ostream& out,
                        std::ostream& err, std::size_t timeseries_byte_limit = 0) {
  namespace fs = std::filesystem;
  try {
    for (const auto& w : cfg.validate()) err << "warning: " << w << "\n";
    const Model model = cfg.model();
    const CavityGrid grid = model.grid();
    const fs::path dir = cfg.output.directory;
    fs::create_directories(dir);
    const std::uint64_t hash = config_hash(cfg);

    CoupledState s;
    RunStatus status;
    std::optional<double> resume;
    if (restart) {
      Checkpoint ck = checkpoint_read(*restart, hash);
      if (ck.dims != grid.cells()) throw FormatError("checkpoint grid does not match the configuration");
      s = std::move(ck.state);
      status = ck.status;
      refresh_kinematics(s, model.body);
      resume = s.t;
    } else {
      s = make_initial_state(cfg);
    }

    nlohmann::json meta = {{"config", to_json(cfg)},
                           {"config_hash", detail::hex64(hash)},
                           {"initial_hash", detail::hex64(initial_descriptor_hash(cfg))},
                           {"preset", cfg.preset},
                           {"perturbation_note", "small-data presets are empirically small, not threshold-certified"}};
    {
      std::ofstream m(dir / "meta.json");
      m << meta.dump(2) << "\n";
    }

    TimeSeriesWriter writer(dir / "timeseries.csv", resume);
    if (timeseries_byte_limit) writer.set_byte_limit(timeseries_byte_limit);
    std::vector<DiagnosticsSample> rows = resume ? read_timeseries(dir / "timeseries.csv") : std::vector<DiagnosticsSample>{};
    // the dissipation column is a rate; the certificate needs the running integral
    std::vector<double> dissipation(rows.size(), std::numeric_limits<double>::quiet_NaN());

    Solver solver(model);
    Solver probe(model);
    const StepControl ctrl = cfg.step_control();
    const double rho_bar = cfg.initial.density;
    const double interval = cfg.output.interval > 0.0 ? cfg.output.interval : (cfg.t_end > 0.0 ? cfg.t_end : 1.0);
    // outputs are numbered by row so that fields_k.raw pairs with row k of the series
    std::uint64_t next_index = resume && !rows.empty() ? rows.size() - 1 : 0;
    OmegaLimitDetector detector(static_cast<std::size_t>(cfg.certify.omega_window), cfg.certify.omega_tol);
    double dt_used = 0.0;
    bool first = true;

    auto observe = [&](const CoupledState& x, const RunStatus& st) {
      const std::uint64_t k = next_index++;
      const bool at_end = x.t >= cfg.t_end;
      dt_used = std::max(dt_used, probe.cfl_dt(x, ctrl));
      const bool skip_row = first && resume.has_value();
      first = false;
      const DiagnosticsSample d = make_sample(probe, x, rho_bar);
      if (!skip_row) {
        writer.write(d);
        rows.push_back(d);
        dissipation.push_back(st.dissipation);
      } else if (!dissipation.empty()) {
        dissipation.back() = st.dissipation;
      }
      detector.push(d.v_l2, x.fluid.rho, x.omega, x.xi);
      if (cfg.output.snapshot_every > 0 && k % static_cast<std::uint64_t>(cfg.output.snapshot_every) == 0) {
        snapshot_export(x, grid, dir / detail::numbered("fields", k, ".raw"), SnapshotFormat::raw);
        snapshot_export(x, grid, dir / detail::numbered("snapshot", k, ".csv"), SnapshotFormat::csv);
      }
      if ((cfg.output.checkpoint_every > 0 && k % static_cast<std::uint64_t>(cfg.output.checkpoint_every) == 0 &&
           !skip_row) ||
          at_end)
        checkpoint_write(dir / (at_end ? std::string("checkpoint_final.cspn") : detail::numbered("checkpoint", k, ".cspn")),
                         Checkpoint{hash, grid.cells(), x, st});
    };
    auto rate = [&](const CoupledState& x) { return dissipation_rate(probe, x); };

    int code = exit_ok;
    try {
      simulate(solver, s, cfg.t_end, ctrl, interval, status, observe, rate);
    } catch (const NumericalError& e) {
      code = report_error(e, err);
    }

    // drop rows whose running dissipation is unknown (written before a restart)
    std::vector<DiagnosticsSample> cert_rows;
    std::vector<double> cert_diss;
    for (std::size_t i = 0; i < rows.size(); ++i)
      if (std::isfinite(dissipation[i]) || i == 0) {
        cert_rows.push_back(rows[i]);
        cert_diss.push_back(std::isfinite(dissipation[i]) ? dissipation[i] : 0.0);
      }
    if (!cert_rows.empty() && !rows.empty()) cert_rows.front().energy = rows.front().energy;

    const DiagnosticsSample last = rows.empty() ? DiagnosticsSample{} : rows.back();
    out << "t = " << last.t << ", steps = " << status.steps << "\n";
    if (!rows.empty()) {
      const double m0 = rows.front().mass;
      const double M0 = rows.front().M_norm;
      out << "mass drift (relative) = " << std::abs(last.mass - m0) / m0 << "\n";
      out << "|M| drift (relative)  = " << (M0 > 0.0 ? std::abs(last.M_norm - M0) / M0 : std::abs(last.M_norm)) << "\n";
      out << "energy = " << last.energy << ", cumulative dissipation = " << status.dissipation << "\n";
      out << "omega = (" << last.omega[0] << ", " << last.omega[1] << ", " << last.omega[2] << ")\n";
      out << "relative velocity L2 = " << last.v_l2 << "\n";
    }
    if (code != exit_ok) return code;

    if (status.floor_hits > 0)
      out << "positivity floor activated " << status.floor_hits << " times: run is not certifiable\n";
    const double defect = constraint_defect(s, model);
    if (defect > 1e-12) {
      err << "error: invariant core.kinematic_constraints violated: relative defect " << defect << "\n";
      return exit_violation;
    }
    // the running integral after a restart is only known from this process on
    const Certificate cert = certify_series(cfg, cert_rows, cert_diss, dt_used, status.floor_hits > 0);
    if (!cert.ok) {
      err << "error: invariant " << cert.invariant << " violated: " << cert.message << "\n";
      return exit_violation;
    }

    const auto verdict = detector.verdict(grid, rho_bar);
    if (verdict.converged) {
      std::vector<double> dev(verdict.rho.size());
      for (std::size_t c = 0; c < dev.size(); ++c) dev[c] = verdict.rho[c] - rho_bar;
      const double tol = cfg.certify.omega_tol;
      const bool rest = norm(verdict.omega) <= tol && norm(verdict.xi) <= tol && l2_norm(dev, grid) <= tol;
      out << "omega-limit: converged (spread " << verdict.spread << ")"
          << (rest ? ", converged to uniform rest" : "") << (verdict.in_band ? ", density within (rho_bar/2, 3 rho_bar/2)" : ", density outside (rho_bar/2, 3 rho_bar/2)") << "\n";
    } else {
      out << "omega-limit: not converged (spread " << verdict.spread << ")\n";
    }
    meta["final"] = {{"t", s.t}, {"steps", status.steps}, {"floor_hits", status.floor_hits},
                     {"dissipation", status.dissipation}, {"omega_limit_converged", verdict.converged}};
    std::ofstream m(dir / "meta.json");
    m << meta.dump(2) << "\n";
    return exit_ok;
  } catch (const std::exception& e) {
    return report_error(e, err);
  }
}

struct SteadyReport {
  SteadyState state;
  SteadyResidual residual;
  bool ok = false;
};

inline SteadyReport run_steady(const RunConfig& cfg, const CavityGrid& grid, std::optional<Vec3> hint = std::nullopt) {
  BodySpec body{cfg.body_mass, cfg.inertia, grid};
  SteadyOptions opt;
  opt.tol = cfg.steady.tol;
  opt.max_iter = cfg.steady.max_iter;
  opt.relaxation = cfg.steady.relaxation;
  opt.hint = hint;
  const double m_F = cfg.fluid_mass();
  SteadyReport r;
  r.state = solve_steady(body, cfg.law, m_F, cfg.steady.m0, cfg.steady.axis_index, opt);
  r.residual = steady_residual(r.state, body, cfg.law, m_F, cfg.steady.m0);
  r.ok = r.residual.max_scaled() <= 10.0 * cfg.steady.tol;
  return r;
}

inline int cmd_steady(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  namespace fs = std::filesystem;
  try {
    for (const auto& w : cfg.validate()) err << "warning: " << w << "\n";
    const SteadyReport r = run_steady(cfg, cfg.grid());
    const fs::path dir = cfg.output.directory;
    fs::create_directories(dir);
    const CavityGrid grid = cfg.grid();
    const SteadyResidual& res = r.residual;
    nlohmann::json j = {
        {"omega", {r.state.omega[0], r.state.omega[1], r.state.omega[2]}},
        {"xi", {r.state.xi[0], r.state.xi[1], r.state.xi[2]}},
        {"c", r.state.c},
        {"axis_index", r.state.axis_index},
        {"iterations", r.state.iterations},
        {"residual",
         {{"profile", res.profile}, {"profile_scaled", res.profile_scaled}, {"alignment", res.alignment},
          {"momentum", res.momentum}, {"momentum_scaled", res.momentum_scaled}, {"mass", res.mass},
          {"mass_scaled", res.mass_scaled}, {"angular", res.angular}, {"angular_scaled", res.angular_scaled},
          {"weak_momentum", res.weak_momentum}}},
        {"ok", r.ok}};
    std::ofstream(dir / "steady.json") << j.dump(2) << "\n";
    CoupledState s = steady_to_state(r.state, BodySpec{cfg.body_mass, cfg.inertia, grid});
    snapshot_export(s, grid, dir / "steady_fields.csv", SnapshotFormat::csv);
    snapshot_export(s, grid, dir / "steady_fields.raw", SnapshotFormat::raw);
    out << "steady state: omega = (" << r.state.omega[0] << ", " << r.state.omega[1] << ", " << r.state.omega[2]
        << "), c = " << r.state.c << ", iterations = " << r.state.iterations << "\n";
    out << "residuals (scaled): profile " << res.profile_scaled << ", alignment " << res.alignment << ", momentum "
        << res.momentum_scaled << ", mass " << res.mass_scaled << ", angular " << res.angular_scaled
        << "; weak momentum " << res.weak_momentum << "\n";
    if (!r.ok) {
      err << "error: invariant steady.residuals violated: largest scaled residual " << res.max_scaled()
          << " exceeds 10 tol\n";
      return exit_violation;
    }
    return exit_ok;
  } catch (const std::exception& e) {
    return report_error(e, err);
  }
}

// ---------------------------------------------------------------- studies

enum class StudyKind { d, b, grid, dt };

struct StudyRow {
  double parameter = 0.0;
  double metric = 0.0;
};

struct StudyResult {
  StudyKind kind = StudyKind::d;
  std::vector<StudyRow> rows;
  double order = 0.0;
  bool ok = false;
  std::string criterion;
};

/// Largest tendency of a state: max(max |dq|, c_bar max |drho|).
inline double max_tendency(const CoupledState& s, const Model& model, double rho_bar) {
  Solver solver(model);
  const Tendency t = solver.residual(s);
  double dq = 0.0, dr = 0.0;
  for (std::size_t c = 0; c < t.drho.size(); ++c) {
    dq = std::max(dq, norm(t.dq[c]));
    dr = std::max(dr, std::abs(t.drho[c]));
  }
  return std::max(dq, model.effective_pressure().sound_speed(rho_bar) * dr);
}

inline StudyResult run_study(const RunConfig& base, StudyKind kind, std::ostream& log) {
  base.validate();
  StudyResult r;
  r.kind = kind;
  const double rho_bar = base.initial.density;
  if (kind == StudyKind::d || kind == StudyKind::b) {
    std::vector<double> values = base.study.values.empty() ? std::vector<double>{1e-2, 1e-3, 1e-4} : base.study.values;
    if (values.size() < 3) throw ConfigError("study.values needs at least 3 entries");
    std::sort(values.begin(), values.end(), std::greater<>());
    RunConfig ref = base;
    ref.reg.d = 0.0;
    ref.reg.b = 0.0;
    auto reference_run = std::async(std::launch::async, [ref] { return run_in_memory(ref).final_state; });
    std::vector<std::future<CoupledState>> runs;
    for (double v : values) {
      RunConfig c = base;
      c.reg.d = kind == StudyKind::d ? v : 0.0;
      c.reg.b = kind == StudyKind::b ? v : 0.0;
      runs.push_back(std::async(std::launch::async, [c] { return run_in_memory(c).final_state; }));
    }
    const CoupledState reference = reference_run.get();
    const Model model = ref.model();
    for (std::size_t i = 0; i < values.size(); ++i) {
      r.rows.push_back({values[i], relative_entropy_total(runs[i].get(), reference, model)});
      log << (kind == StudyKind::d ? "d = " : "b = ") << values[i] << "  distance = " << r.rows.back().metric << "\n";
    }
    // non-increasing as the parameter shrinks, up to a round-off floor
    const double floor = 1e-13 * std::max(1.0, total_energy(reference, model, rho_bar));
    r.ok = true;
    for (std::size_t i = 1; i < r.rows.size(); ++i)
      if (r.rows[i].metric > r.rows[i - 1].metric + floor) r.ok = false;
    std::vector<double> x, y;
    for (const auto& row : r.rows)
      if (row.metric > 0.0) {
        x.push_back(row.parameter);
        y.push_back(row.metric);
      }
    r.order = x.size() >= 2 ? fitted_order(x, y) : 0.0;
    r.criterion = "distance to the unregularized run is non-increasing as the parameter decreases";
  } else if (kind == StudyKind::grid) {
    std::vector<int> sizes = base.study.grid_sizes.empty() ? std::vector<int>{8, 16, 32} : base.study.grid_sizes;
    if (sizes.size() < 3) throw ConfigError("study.grid_sizes needs at least 3 entries");
    std::sort(sizes.begin(), sizes.end());
    std::vector<double> hs, ms;
    for (int n : sizes) {
      RunConfig c = base;
      c.cells = {n, n, n};
      const CavityGrid grid = c.grid();
      const SteadyReport st = run_steady(c, grid);
      const CoupledState s = steady_to_state(st.state, BodySpec{c.body_mass, c.inertia, grid});
      const double m = max_tendency(s, c.model(), rho_bar);
      r.rows.push_back({grid.min_spacing(), m});
      hs.push_back(grid.min_spacing());
      ms.push_back(m);
      log << "N = " << n << "  max tendency = " << m << "\n";
    }
    r.order = fitted_order(hs, ms);
    r.ok = r.order >= 1.8;
    r.criterion = "steady-state tendency decays at fitted order >= 1.8";
  } else {
    std::vector<int> div = base.study.dt_divisors.empty() ? std::vector<int>{1, 2, 4} : base.study.dt_divisors;
    if (div.size() < 3) throw ConfigError("study.dt_divisors needs at least 3 entries");
    if (!(base.study.dt0 > 0.0)) throw ConfigError("study.dt0 must be positive for a dt study");
    std::sort(div.begin(), div.end());
    std::vector<double> dts, drift;
    for (int k : div) {
      RunConfig c = base;
      c.dt_max = base.study.dt0 / k;
      c.output.interval = 0.0;
      Solver probe(c.model());
      const CoupledState s0 = make_initial_state(c);
      if (probe.cfl_dt(s0, StepControl{c.cfl, std::numeric_limits<double>::infinity(), c.step_control().rho_min}) <
          *c.dt_max)
        throw ConfigError("study.dt0 / " + std::to_string(k) + " exceeds the stability bound; dt would not be fixed");
      const RunResult run = run_in_memory(c, {}, s0);
      const double M0 = norm(s0.M);
      const double d = std::abs(norm(run.final_state.M) - M0) / M0;
      r.rows.push_back({*c.dt_max, d});
      dts.push_back(*c.dt_max);
      drift.push_back(d);
      log << "dt = " << *c.dt_max << "  |M| drift = " << d << "\n";
    }
    r.order = fitted_order(dts, drift);
    r.ok = r.order >= 1.8;
    r.criterion = "|M| drift decays at fitted order >= 1.8 in dt";
  }
  return r;
}

inline int cmd_study(const RunConfig& cfg, StudyKind kind, std::ostream& out, std::ostream& err) {
  try {
    const StudyResult r = run_study(cfg, kind, out);
    std::filesystem::create_directories(cfg.output.directory);
    const char* name = kind == StudyKind::d ? "d" : kind == StudyKind::b ? "b" : kind == StudyKind::grid ? "grid" : "dt";
    std::ofstream table(std::filesystem::path(cfg.output.directory) / (std::string("study_") + name + ".csv"));
    table << "parameter,metric\n";
    for (const auto& row : r.rows) table << format_double(row.parameter) << "," << format_double(row.metric) << "\n";
    out << "fitted order = " << r.order << "\n" << (r.ok ? "pass: " : "FAIL: ") << r.criterion << "\n";
    if (!r.ok) {
      err << "error: invariant harness.study_" << name << " violated: " << r.criterion << "\n";
      return exit_violation;
    }
    return exit_ok;
  } catch (const std::exception& e) {
    return report_error(e, err);
  }
}

// ---------------------------------------------------------------- compare

struct CompareRow {
  double t = 0.0;
  double distance = 0.0;
};

struct CompareResult {
  std::vector<CompareRow> rows;
  Envelope envelope;
  bool flagged = false;  ///< distance(0) = 0 but a later distance leaves the envelope
};

/// Distances between two recorded states at matched times, the finer restricted onto the coarser.
inline double run_distance(const CoupledState& a, const CavityGrid& ga, const CoupledState& b, const CavityGrid& gb,
                           const Model& coarse_model) {
  if (ga.cell_count() >= gb.cell_count())
    return relative_entropy_total(ga.same_shape(gb) ? a : restrict_to_coarse(a, ga, gb), b, coarse_model);
  return relative_entropy_total(restrict_to_coarse(b, gb, ga), a, coarse_model);
}

/// Flags a run pair whose distance starts at zero yet exceeds `slack` times the fitted envelope.
inline CompareResult assess_distances(std::vector<CompareRow> rows, double zero_tol, double slack = 10.0) {
  CompareResult r;
  r.rows = std::move(rows);
  std::vector<double> t, d;
  for (const auto& row : r.rows)
    if (row.t > 0.0) {
      t.push_back(row.t);
      d.push_back(row.distance);
    }
  r.envelope = fit_envelope(t, d);
  if (!r.rows.empty() && r.rows.front().distance <= zero_tol)
    for (const auto& row : r.rows)
      if (row.t > 0.0 && row.distance > slack * r.envelope(row.t)) r.flagged = true;
  return r;
}

inline int cmd_compare(const std::filesystem::path& dir_a, const std::filesystem::path& dir_b, std::ostream& out,
                       std::ostream& err) {
  namespace fs = std::filesystem;
  try {
    auto load_meta = [](const fs::path& d) {
      std::ifstream in(d / "meta.json");
      if (!in) throw IoError("no meta.json in " + d.string());
      return nlohmann::json::parse(in);
    };
    const auto ma = load_meta(dir_a), mb = load_meta(dir_b);
    if (ma.at("initial_hash") != mb.at("initial_hash")) {
      err << "error: runs do not share initial data (initial descriptors differ)\n";
      return exit_usage;
    }
    const RunConfig ca = parse_config(ma.at("config")), cb = parse_config(mb.at("config"));
    const CavityGrid ga = ca.grid(), gb = cb.grid();
    const Model coarse = ga.cell_count() <= gb.cell_count() ? ca.model() : cb.model();
    const auto ra = read_timeseries(dir_a / "timeseries.csv"), rb = read_timeseries(dir_b / "timeseries.csv");
    std::vector<CompareRow> rows;
    for (std::size_t k = 0; k < std::min(ra.size(), rb.size()); ++k) {
      if (std::abs(ra[k].t - rb[k].t) > 1e-12 * std::max(1.0, std::abs(ra[k].t))) continue;
      const fs::path fa = dir_a / detail::numbered("fields", k, ".raw"), fb = dir_b / detail::numbered("fields", k, ".raw");
      if (!fs::exists(fa) || !fs::exists(fb)) continue;
      CoupledState sa, sb;
      sa.fluid = snapshot_read_raw(fa, ga);
      sb.fluid = snapshot_read_raw(fb, gb);
      sa.omega = ra[k].omega;
      sa.xi = ra[k].xi;
      sb.omega = rb[k].omega;
      sb.xi = rb[k].xi;
      rows.push_back({ra[k].t, run_distance(sa, ga, sb, gb, coarse)});
    }
    if (rows.empty()) {
      err << "error: the runs share no snapshot times\n";
      return exit_usage;
    }
    const double scale = std::max(std::abs(ra.front().energy), 1e-300);
    const CompareResult r = assess_distances(rows, 1e-14 * scale);
    out << "t,distance\n";
    for (const auto& row : r.rows) out << format_double(row.t) << "," << format_double(row.distance) << "\n";
    out << "envelope: " << r.envelope.c1 << " exp(" << r.envelope.c2 << " t)\n";
    if (r.flagged) out << "flag: distance(0) = 0 but the distance leaves the fitted envelope\n";
    return exit_ok;
  } catch (const std::exception& e) {
    return report_error(e, err);
  }
}

}  // namespace cavity_spin
