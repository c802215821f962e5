#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cavity_spin/dynamics.hpp"
#include "cavity_spin/errors.hpp"
#include "cavity_spin/state.hpp"

namespace cavity_spin {

enum class InitialKind { rest, rigid_rotation, file };

struct InitialSpec {
  InitialKind kind = InitialKind::rest;
  double density = 1.0;  ///< rho_bar
  Vec3 omega0;
  double epsilon = 0.0;
  std::uint64_t seed = 1;
  std::optional<Vec3> angular_momentum;  ///< overrides the M implied by omega0
  std::string path;                      ///< raw field file for kind == file
};

struct OutputSpec {
  double interval = 0.0;  ///< 0: only initial and final samples
  std::string directory = "run";
  int snapshot_every = 0;  ///< in output intervals; 0 disables
  int checkpoint_every = 0;
};

struct SteadySpec {
  double m0 = 0.0;
  int axis_index = 2;
  double tol = 1e-12;
  int max_iter = 500;
  double relaxation = 0.5;
};

struct CertifySpec {
  double energy_c = 1.0;  ///< slack constant in E(t) + D <= E(0)(1 + C (h + dt))
  int omega_window = 5;
  double omega_tol = 1e-5;
};

struct StudySpec {
  std::vector<double> values;
  std::vector<int> grid_sizes;
  std::vector<int> dt_divisors;
  double dt0 = 0.0;
};

struct RunConfig {
  Vec3 extents{1.0, 1.0, 1.0};
  std::array<int, 3> cells{16, 16, 16};
  Vec3 offset;
  double body_mass = 1.0;
  Mat3 inertia = Mat3::identity();
  PressureLaw law;
  ViscositySpec visc;
  RegularizationSpec reg;
  InitialSpec initial;
  double t_end = 0.0;
  double cfl = 0.5;
  std::optional<double> dt_max;
  std::optional<double> rho_min;
  OutputSpec output;
  SteadySpec steady;
  CertifySpec certify;
  StudySpec study;
  std::string preset;
  std::string notes;

  CavityGrid grid() const { return CavityGrid(extents, cells, offset); }

  Model model() const {
    Model m;
    m.body.mass = body_mass;
    m.body.inertia = inertia;
    m.body.cavity = grid();
    m.law = law;
    m.visc = visc;
    m.reg = reg;
    return m;
  }

  StepControl step_control() const {
    StepControl c;
    c.cfl = cfl;
    if (dt_max) c.dt_max = *dt_max;
    c.rho_min = rho_min ? *rho_min : 1e-12 * initial.density;
    return c;
  }

  double fluid_mass() const { return initial.density * extents[0] * extents[1] * extents[2]; }

  /// Validates every parameter; returns warnings.
  std::vector<std::string> validate() const {
    std::vector<std::string> warnings;
    try {
      warnings = model().validate();
      step_control().validate();
    } catch (const DomainError& e) {
      throw ConfigError(e.what());
    }
    if (!(initial.density > 0.0)) throw ConfigError("initial.density must be positive");
    if (!(initial.epsilon >= 0.0 && initial.epsilon < 1.0)) throw ConfigError("initial.epsilon must lie in [0, 1)");
    if (initial.kind == InitialKind::file && initial.path.empty())
      throw ConfigError("initial.path is required for kind \"file\"");
    if (!(t_end >= 0.0)) throw ConfigError("t_end must be >= 0");
    if (!(output.interval >= 0.0)) throw ConfigError("output.interval must be >= 0");
    if (output.snapshot_every < 0 || output.checkpoint_every < 0)
      throw ConfigError("output cadences must be >= 0");
    if (steady.axis_index < 0 || steady.axis_index > 2) throw ConfigError("steady.axis_index must be 0, 1 or 2");
    if (!(steady.m0 >= 0.0)) throw ConfigError("steady.m0 must be >= 0");
    if (!(steady.tol > 0.0) || steady.max_iter < 1) throw ConfigError("steady.tol and steady.max_iter must be positive");
    if (!(steady.relaxation > 0.0 && steady.relaxation <= 1.0)) throw ConfigError("steady.relaxation must lie in (0, 1]");
    if (certify.omega_window < 2) throw ConfigError("certify.omega_window must be >= 2");
    if (!(certify.energy_c >= 0.0) || !(certify.omega_tol > 0.0)) throw ConfigError("certify constants must be positive");
    return warnings;
  }
};

namespace detail {

using json = nlohmann::json;

inline void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& item : j.items())
    if (!ok.count(item.key()))
      throw ConfigError("unknown key \"" + (where.empty() ? "" : where + ".") + item.key() + "\"");
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for \"") + key + "\": " + e.what());
  }
}

inline Vec3 vec3_of(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(what + " must be an array of 3 numbers");
  Vec3 v;
  for (int a = 0; a < 3; ++a) {
    if (!j[a].is_number()) throw ConfigError(what + " must be an array of 3 numbers");
    v[a] = j[a].get<double>();
  }
  return v;
}

inline json json_of(const Vec3& v) { return json::array({v[0], v[1], v[2]}); }

inline const char* kind_name(InitialKind k) {
  switch (k) {
    case InitialKind::rest: return "rest";
    case InitialKind::rigid_rotation: return "rigid_rotation";
    case InitialKind::file: return "file";
  }
  return "rest";
}

}  // namespace detail

inline RunConfig parse_config(const nlohmann::json& j) {
  using detail::check_keys;
  using detail::get_or;
  check_keys(j, "", {"grid", "body", "pressure", "viscosity", "regularization", "initial", "t_end", "step", "output",
                     "steady", "certify", "study", "preset", "notes"});
  RunConfig c;
  if (j.contains("grid")) {
    const auto& g = j["grid"];
    check_keys(g, "grid", {"extents", "cells", "offset"});
    if (g.contains("extents")) c.extents = detail::vec3_of(g["extents"], "grid.extents");
    if (g.contains("cells")) {
      const auto& n = g["cells"];
      if (!n.is_array() || n.size() != 3) throw ConfigError("grid.cells must be an array of 3 integers");
      for (int a = 0; a < 3; ++a) {
        if (!n[a].is_number_integer()) throw ConfigError("grid.cells must be an array of 3 integers");
        c.cells[a] = n[a].get<int>();
      }
    }
    if (g.contains("offset")) c.offset = detail::vec3_of(g["offset"], "grid.offset");
  }
  if (j.contains("body")) {
    const auto& b = j["body"];
    check_keys(b, "body", {"mass", "inertia"});
    c.body_mass = get_or(b, "mass", c.body_mass);
    if (b.contains("inertia")) {
      const auto& I = b["inertia"];
      if (!I.is_array() || I.size() != 3) throw ConfigError("body.inertia must be a 3x3 array");
      for (int r = 0; r < 3; ++r) {
        const Vec3 row = detail::vec3_of(I[r], "body.inertia row");
        for (int k = 0; k < 3; ++k) c.inertia(r, k) = row[k];
      }
    }
  }
  if (j.contains("pressure")) {
    check_keys(j["pressure"], "pressure", {"a", "gamma"});
    c.law.a = get_or(j["pressure"], "a", c.law.a);
    c.law.gamma = get_or(j["pressure"], "gamma", c.law.gamma);
  }
  if (j.contains("viscosity")) {
    check_keys(j["viscosity"], "viscosity", {"mu", "lambda"});
    c.visc.mu = get_or(j["viscosity"], "mu", c.visc.mu);
    c.visc.lambda = get_or(j["viscosity"], "lambda", c.visc.lambda);
  }
  if (j.contains("regularization")) {
    check_keys(j["regularization"], "regularization", {"d", "b", "beta"});
    c.reg.d = get_or(j["regularization"], "d", c.reg.d);
    c.reg.b = get_or(j["regularization"], "b", c.reg.b);
    c.reg.beta = get_or(j["regularization"], "beta", c.reg.beta);
  }
  if (j.contains("initial")) {
    const auto& in = j["initial"];
    check_keys(in, "initial", {"kind", "density", "omega0", "epsilon", "seed", "angular_momentum", "path"});
    const std::string kind = get_or<std::string>(in, "kind", "rest");
    if (kind == "rest") c.initial.kind = InitialKind::rest;
    else if (kind == "rigid_rotation") c.initial.kind = InitialKind::rigid_rotation;
    else if (kind == "file") c.initial.kind = InitialKind::file;
    else throw ConfigError("initial.kind must be \"rest\", \"rigid_rotation\" or \"file\"");
    c.initial.density = get_or(in, "density", c.initial.density);
    if (in.contains("omega0")) c.initial.omega0 = detail::vec3_of(in["omega0"], "initial.omega0");
    c.initial.epsilon = get_or(in, "epsilon", c.initial.epsilon);
    c.initial.seed = get_or<std::uint64_t>(in, "seed", c.initial.seed);
    if (in.contains("angular_momentum"))
      c.initial.angular_momentum = detail::vec3_of(in["angular_momentum"], "initial.angular_momentum");
    c.initial.path = get_or<std::string>(in, "path", "");
  }
  c.t_end = get_or(j, "t_end", c.t_end);
  if (j.contains("step")) {
    check_keys(j["step"], "step", {"cfl", "dt_max", "rho_min"});
    c.cfl = get_or(j["step"], "cfl", c.cfl);
    if (j["step"].contains("dt_max")) c.dt_max = get_or(j["step"], "dt_max", 0.0);
    if (j["step"].contains("rho_min")) c.rho_min = get_or(j["step"], "rho_min", 0.0);
  }
  if (j.contains("output")) {
    const auto& o = j["output"];
    check_keys(o, "output", {"interval", "directory", "snapshot_every", "checkpoint_every"});
    c.output.interval = get_or(o, "interval", c.output.interval);
    c.output.directory = get_or(o, "directory", c.output.directory);
    c.output.snapshot_every = get_or(o, "snapshot_every", c.output.snapshot_every);
    c.output.checkpoint_every = get_or(o, "checkpoint_every", c.output.checkpoint_every);
  }
  if (j.contains("steady")) {
    const auto& s = j["steady"];
    check_keys(s, "steady", {"m0", "axis_index", "tol", "max_iter", "relaxation"});
    c.steady.m0 = get_or(s, "m0", c.steady.m0);
    c.steady.axis_index = get_or(s, "axis_index", c.steady.axis_index);
    c.steady.tol = get_or(s, "tol", c.steady.tol);
    c.steady.max_iter = get_or(s, "max_iter", c.steady.max_iter);
    c.steady.relaxation = get_or(s, "relaxation", c.steady.relaxation);
  }
  if (j.contains("certify")) {
    const auto& s = j["certify"];
    check_keys(s, "certify", {"energy_c", "omega_window", "omega_tol"});
    c.certify.energy_c = get_or(s, "energy_c", c.certify.energy_c);
    c.certify.omega_window = get_or(s, "omega_window", c.certify.omega_window);
    c.certify.omega_tol = get_or(s, "omega_tol", c.certify.omega_tol);
  }
  if (j.contains("study")) {
    const auto& s = j["study"];
    check_keys(s, "study", {"values", "grid_sizes", "dt_divisors", "dt0"});
    c.study.values = get_or(s, "values", c.study.values);
    c.study.grid_sizes = get_or(s, "grid_sizes", c.study.grid_sizes);
    c.study.dt_divisors = get_or(s, "dt_divisors", c.study.dt_divisors);
    c.study.dt0 = get_or(s, "dt0", c.study.dt0);
  }
  c.preset = get_or<std::string>(j, "preset", "");
  c.notes = get_or<std::string>(j, "notes", "");
  return c;
}

/// Canonical JSON form; parse_config(to_json(c)) reproduces c.
inline nlohmann::json to_json(const RunConfig& c) {
  using detail::json;
  using detail::json_of;
  json j;
  j["grid"] = {{"extents", json_of(c.extents)},
               {"cells", json::array({c.cells[0], c.cells[1], c.cells[2]})},
               {"offset", json_of(c.offset)}};
  json I = json::array();
  for (int r = 0; r < 3; ++r) I.push_back(json_of(c.inertia.row(static_cast<std::size_t>(r))));
  j["body"] = {{"mass", c.body_mass}, {"inertia", I}};
  j["pressure"] = {{"a", c.law.a}, {"gamma", c.law.gamma}};
  j["viscosity"] = {{"mu", c.visc.mu}, {"lambda", c.visc.lambda}};
  j["regularization"] = {{"d", c.reg.d}, {"b", c.reg.b}, {"beta", c.reg.beta}};
  json in = {{"kind", detail::kind_name(c.initial.kind)},
             {"density", c.initial.density},
             {"omega0", json_of(c.initial.omega0)},
             {"epsilon", c.initial.epsilon},
             {"seed", c.initial.seed}};
  if (c.initial.angular_momentum) in["angular_momentum"] = json_of(*c.initial.angular_momentum);
  if (!c.initial.path.empty()) in["path"] = c.initial.path;
  j["initial"] = in;
  j["t_end"] = c.t_end;
  json st = {{"cfl", c.cfl}};
  if (c.dt_max) st["dt_max"] = *c.dt_max;
  if (c.rho_min) st["rho_min"] = *c.rho_min;
  j["step"] = st;
  j["output"] = {{"interval", c.output.interval},
                 {"directory", c.output.directory},
                 {"snapshot_every", c.output.snapshot_every},
                 {"checkpoint_every", c.output.checkpoint_every}};
  j["steady"] = {{"m0", c.steady.m0},
                 {"axis_index", c.steady.axis_index},
                 {"tol", c.steady.tol},
                 {"max_iter", c.steady.max_iter},
                 {"relaxation", c.steady.relaxation}};
  j["certify"] = {{"energy_c", c.certify.energy_c},
                  {"omega_window", c.certify.omega_window},
                  {"omega_tol", c.certify.omega_tol}};
  j["study"] = {{"values", c.study.values},
                {"grid_sizes", c.study.grid_sizes},
                {"dt_divisors", c.study.dt_divisors},
                {"dt0", c.study.dt0}};
  if (!c.preset.empty()) j["preset"] = c.preset;
  if (!c.notes.empty()) j["notes"] = c.notes;
  return j;
}

inline std::string serialize_config(const RunConfig& c) { return to_json(c).dump(2) + "\n"; }

inline RunConfig parse_config_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(j);
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

/// FNV-1a 64 over the bytes of s.
inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

/// Hash of the physics and numerics; the output directory and notes do not enter.
inline std::uint64_t config_hash(const RunConfig& c) {
  RunConfig k = c;
  k.output.directory.clear();
  k.notes.clear();
  return fnv1a64(to_json(k).dump());
}

/// Hash of everything that fixes the initial data (geometry, body, fluid law, initial section).
inline std::uint64_t initial_descriptor_hash(const RunConfig& c) {
  nlohmann::json j = to_json(c);
  nlohmann::json d = {{"extents", j["grid"]["extents"]}, {"offset", j["grid"]["offset"]}, {"body", j["body"]},
                      {"pressure", j["pressure"]},       {"initial", j["initial"]}};
  return fnv1a64(d.dump());
}

}  // namespace cavity_spin
