#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <sys/wait.h>

#include <gtest/gtest.h>

#include "cavity_spin/cavity_spin.hpp"

using namespace cavity_spin;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = CAVITY_SPIN_SOURCE_DIR;
const std::string kCli = CAVITY_SPIN_CLI;

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("cavity_spin_harness_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct CliRun {
  int code;
  std::string out, err;
};

CliRun cli(const std::string& args, const fs::path& dir) {
  const fs::path o = dir / "stdout.txt", e = dir / "stderr.txt";
  const std::string cmd = "'" + kCli + "' " + args + " > '" + o.string() + "' 2> '" + e.string() + "'";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_text(o), read_text(e)};
}

fs::path write_config(const RunConfig& c, const fs::path& dir, const std::string& name) {
  const fs::path p = dir / name;
  std::ofstream(p) << serialize_config(c);
  return p;
}

RunConfig short_small_data(const fs::path& out) {
  RunConfig c = load_config(kSource / "configs" / "small_data_a100.json");
  c.cells = {8, 8, 8};
  c.t_end = 0.2;
  c.output.interval = 0.02;
  c.output.snapshot_every = 5;
  c.output.checkpoint_every = 5;
  c.output.directory = out.string();
  return c;
}

}  // namespace

TEST(Config, SerializeIsIdempotent) {
  for (const auto& entry : fs::directory_iterator(kSource / "configs")) {
    const RunConfig c = load_config(entry.path());
    const std::string once = serialize_config(c);
    const std::string twice = serialize_config(parse_config_text(once));
    EXPECT_EQ(once, twice) << entry.path();
    EXPECT_EQ(config_hash(c), config_hash(parse_config_text(once)));
  }
}

TEST(Config, UnknownKeysAreErrors) {
  EXPECT_THROW(parse_config_text(R"({"t_end": 1.0, "tend": 2.0})"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"pressure": {"a": 1.0, "gama": 2.0}})"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"grid": {"cells": [4, 4]}})"), ConfigError);
  EXPECT_THROW(parse_config_text("{"), ConfigError);
}

TEST(Config, HashIgnoresOutputDirectory) {
  RunConfig a = load_config(kSource / "configs" / "rest.json"), b = a;
  b.output.directory = "elsewhere";
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.law.a *= 2.0;
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Fits, PowerLawAndExponential) {
  std::vector<double> h{0.1, 0.05, 0.025}, e, t{0.0, 0.5, 1.0, 1.5}, d;
  for (double x : h) e.push_back(3.0 * x * x);
  EXPECT_NEAR(fitted_order(h, e), 2.0, 1e-12);
  for (double x : t) d.push_back(0.7 * std::exp(-1.3 * x));
  const Envelope env = fit_envelope(t, d);
  EXPECT_NEAR(env.c1, 0.7, 1e-12);
  EXPECT_NEAR(env.c2, -1.3, 1e-12);
}

TEST(Fits, DistanceFlaggedWhenLeavingEnvelope) {
  std::vector<CompareRow> rows{{0.0, 0.0}, {0.1, 1e-6}, {0.2, 1.1e-6}, {0.3, 1.2e-6}, {0.4, 1.3e-6}};
  EXPECT_FALSE(assess_distances(rows, 1e-20).flagged);
  rows.push_back({0.5, 1.0});
  EXPECT_TRUE(assess_distances(rows, 1e-20).flagged);
}

TEST(Certify, MassDriftIsAViolation) {
  RunConfig c = load_config(kSource / "configs" / "rest.json");
  DiagnosticsSample a, b;
  a.mass = 1.0;
  b.t = 0.1;
  b.mass = 1.0 + 1e-9;
  const Certificate cert = certify_series(c, {a, b}, {0.0, 0.0}, 1e-3, false);
  EXPECT_FALSE(cert.ok);
  EXPECT_TRUE(certify_series(c, {a, b}, {0.0, 0.0}, 1e-3, true).ok);
}

TEST(Certify, EnergyGrowthIsAViolation) {
  RunConfig c = load_config(kSource / "configs" / "rest.json");
  DiagnosticsSample a, b;
  a.mass = b.mass = 1.0;
  a.energy = 1.0;
  b.t = 0.1;
  b.energy = 1.5;
  EXPECT_FALSE(certify_series(c, {a, b}, {0.0, 0.0}, 1e-3, false).ok);
  b.energy = 0.9;
  EXPECT_TRUE(certify_series(c, {a, b}, {0.0, 0.1}, 1e-3, false).ok);
}

TEST(Cli, CheckAcceptsEveryShippedConfig) {
  const fs::path dir = scratch("check");
  for (const auto& entry : fs::directory_iterator(kSource / "configs")) {
    const CliRun r = cli("check '" + entry.path().string() + "'", dir);
    EXPECT_EQ(r.code, 0) << entry.path() << "\n" << r.err;
  }
}

TEST(Cli, MalformedConfigIsUsageError) {
  const fs::path dir = scratch("bad");
  std::ofstream(dir / "bad.json") << R"({"t_end": 1.0, "bogus": 1})";
  const CliRun r = cli("check '" + (dir / "bad.json").string() + "'", dir);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("bogus"), std::string::npos);
  EXPECT_EQ(cli("frobnicate", dir).code, 1);
}

TEST(Cli, RestRunStaysAtRest) {
  const fs::path dir = scratch("rest");
  const CliRun r = cli("simulate '" + (kSource / "configs" / "rest.json").string() + "' --out '" + (dir / "run").string() + "'", dir);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("converged to uniform rest"), std::string::npos) << r.out;
  const auto rows = read_timeseries(dir / "run" / "timeseries.csv");
  ASSERT_EQ(rows.size(), 11u);
  for (const auto& row : rows) {
    EXPECT_EQ(row.energy, 0.0);
    EXPECT_EQ(row.v_l2, 0.0);
  }
  EXPECT_NEAR(rows.back().t, 0.1, 1e-15);
  EXPECT_TRUE(fs::exists(dir / "run" / "checkpoint_final.cspn"));
}

TEST(Cli, NanInitialFieldNamesTheCell) {
  const fs::path dir = scratch("nan");
  RunConfig c = load_config(kSource / "configs" / "rest.json");
  c.cells = {4, 4, 4};
  const CavityGrid grid = c.grid();
  CoupledState s;
  s.fluid = FluidField(grid.cell_count(), 1.0);
  s.fluid.rho[grid.index(1, 2, 3)] = std::numeric_limits<double>::quiet_NaN();
  snapshot_export(s, grid, dir / "init.raw", SnapshotFormat::raw);
  c.initial.kind = InitialKind::file;
  c.initial.path = (dir / "init.raw").string();
  c.output.directory = (dir / "run").string();
  const CliRun r = cli("simulate '" + write_config(c, dir, "nan.json").string() + "'", dir);
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("(1, 2, 3)"), std::string::npos) << r.err;
}

TEST(Cli, InfeasibleSteadyExitsTwo) {
  const fs::path dir = scratch("steady_bad");
  RunConfig c = load_config(kSource / "configs" / "rest.json");
  c.law.a = 1e-3;
  c.steady.m0 = 1e3;
  c.output.directory = (dir / "run").string();
  const CliRun r = cli("steady '" + write_config(c, dir, "s.json").string() + "'", dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("steady.profile_feasible"), std::string::npos) << r.err;
}

TEST(Cli, SteadyWritesResiduals) {
  const fs::path dir = scratch("steady_ok");
  RunConfig c = load_config(kSource / "configs" / "rest.json");
  c.law.a = 1e3;
  c.steady.m0 = 5.0;
  c.output.directory = (dir / "run").string();
  const CliRun r = cli("steady '" + write_config(c, dir, "s.json").string() + "'", dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(read_text(dir / "run" / "steady.json"));
  EXPECT_TRUE(j.at("ok").get<bool>());
  EXPECT_LE(j.at("residual").at("alignment").get<double>(), 1e-10);
  EXPECT_TRUE(fs::exists(dir / "run" / "steady_fields.raw"));
}

TEST(Cli, RestartReproducesTheRun) {
  const fs::path dir = scratch("restart");
  const RunConfig c = short_small_data(dir / "a");
  const CliRun full = cli("simulate '" + write_config(c, dir, "c.json").string() + "'", dir);
  ASSERT_EQ(full.code, 0) << full.err;
  fs::copy(dir / "a", dir / "b", fs::copy_options::recursive);
  const fs::path ck = dir / "b" / "checkpoint_000005.cspn";
  ASSERT_TRUE(fs::exists(ck));
  const CliRun again = cli("simulate '" + (dir / "c.json").string() + "' --restart '" + ck.string() + "' --out '" +
                            (dir / "b").string() + "'",
                        dir);
  ASSERT_EQ(again.code, 0) << again.err;
  for (const char* f : {"timeseries.csv", "checkpoint_final.cspn", "fields_000010.raw", "snapshot_000010.csv"})
    EXPECT_EQ(read_text(dir / "a" / f), read_text(dir / "b" / f)) << f;
}

TEST(Cli, RestartRejectsForeignCheckpoint) {
  const fs::path dir = scratch("foreign");
  RunConfig c = short_small_data(dir / "a");
  c.t_end = 0.1;
  ASSERT_EQ(cli("simulate '" + write_config(c, dir, "c.json").string() + "'", dir).code, 0);
  c.law.a = 200.0;
  const CliRun r = cli("simulate '" + write_config(c, dir, "d.json").string() + "' --restart '" +
                        (dir / "a" / "checkpoint_final.cspn").string() + "'",
                    dir);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("hash"), std::string::npos) << r.err;
}

TEST(Cli, CompareRunWithItself) {
  const fs::path dir = scratch("compare");
  RunConfig c = short_small_data(dir / "a");
  c.output.snapshot_every = 1;
  ASSERT_EQ(cli("simulate '" + write_config(c, dir, "a.json").string() + "'", dir).code, 0);
  c.output.directory = (dir / "b").string();
  ASSERT_EQ(cli("simulate '" + write_config(c, dir, "b.json").string() + "'", dir).code, 0);
  // determinism: independent processes give identical bytes
  EXPECT_EQ(read_text(dir / "a" / "timeseries.csv"), read_text(dir / "b" / "timeseries.csv"));
  EXPECT_EQ(read_text(dir / "a" / "checkpoint_final.cspn"), read_text(dir / "b" / "checkpoint_final.cspn"));
  const CliRun r = cli("compare '" + (dir / "a").string() + "' '" + (dir / "b").string() + "'", dir);
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream in(r.out);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "t,distance");
  int n = 0;
  while (std::getline(in, line) && line.find(',') != std::string::npos) {
    EXPECT_EQ(std::stod(line.substr(line.find(',') + 1)), 0.0) << line;
    ++n;
  }
  EXPECT_EQ(n, 11);
  EXPECT_EQ(r.out.find("flag:"), std::string::npos);
}

TEST(Cli, CompareNeedsSharedInitialData) {
  const fs::path dir = scratch("compare_bad");
  RunConfig c = short_small_data(dir / "a");
  c.t_end = 0.04;
  ASSERT_EQ(cli("simulate '" + write_config(c, dir, "a.json").string() + "'", dir).code, 0);
  c.initial.seed = 8;
  c.output.directory = (dir / "b").string();
  ASSERT_EQ(cli("simulate '" + write_config(c, dir, "b.json").string() + "'", dir).code, 0);
  const CliRun r = cli("compare '" + (dir / "a").string() + "' '" + (dir / "b").string() + "'", dir);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("initial data"), std::string::npos);
}

TEST(Simulate, WriteFaultLeavesCompleteRows) {
  const fs::path dir = scratch("fault");
  RunConfig c = load_config(kSource / "configs" / "rest.json");
  c.output.directory = (dir / "run").string();
  std::ostringstream out, err;
  const std::size_t limit = timeseries_header().size() + 100;
  const int code = cmd_simulate(c, std::nullopt, out, err, limit);
  EXPECT_NE(code, 0);
  const std::string text = read_text(dir / "run" / "timeseries.csv");
  ASSERT_FALSE(text.empty());
  EXPECT_EQ(text.back(), '\n');
  EXPECT_LE(text.size(), limit);
  EXPECT_GE(read_timeseries(dir / "run" / "timeseries.csv").size(), 1u);
}

TEST(Simulate, InMemoryMatchesFiles) {
  const fs::path dir = scratch("memory");
  const RunConfig c = short_small_data(dir / "run");
  std::ostringstream out, err;
  ASSERT_EQ(cmd_simulate(c, std::nullopt, out, err), 0) << err.str();
  const RunResult mem = run_in_memory(c);
  const Checkpoint ck = checkpoint_read(dir / "run" / "checkpoint_final.cspn");
  EXPECT_EQ(ck.state.fluid.rho, mem.final_state.fluid.rho);
  EXPECT_EQ(ck.state.fluid.q, mem.final_state.fluid.q);
  EXPECT_EQ(ck.state.M, mem.final_state.M);
}
