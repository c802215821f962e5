#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "cavity_spin/cavity_spin.hpp"

using namespace cavity_spin;

int main(int argc, char** argv) {
  CLI::App app{"Compressible viscous fluid in a rigid cavity of a freely rotating body"};
  app.require_subcommand(1);

  std::string config_path, restart_path, out_dir, kind_name, dir_a, dir_b;

  auto* check = app.add_subcommand("check", "validate a configuration");
  check->add_option("config", config_path, "configuration file")->required();

  auto* sim = app.add_subcommand("simulate", "integrate the coupled system");
  sim->add_option("config", config_path, "configuration file")->required();
  sim->add_option("--restart", restart_path, "resume from a checkpoint");
  sim->add_option("--out", out_dir, "output directory (overrides output.directory)");

  auto* steady = app.add_subcommand("steady", "solve for a steady rigid rotation");
  steady->add_option("config", config_path, "configuration file")->required();
  steady->add_option("--out", out_dir, "output directory (overrides output.directory)");

  auto* study = app.add_subcommand("study", "parameter or resolution study");
  study->add_option("config", config_path, "configuration file")->required();
  study->add_option("--kind", kind_name, "d, b, grid or dt")
      ->required()
      ->check(CLI::IsMember({"d", "b", "grid", "dt"}));
  study->add_option("--out", out_dir, "output directory (overrides output.directory)");

  auto* compare = app.add_subcommand("compare", "distance between two recorded runs");
  compare->add_option("run_a", dir_a, "first run directory")->required();
  compare->add_option("run_b", dir_b, "second run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? exit_ok : exit_usage;
  }

  if (*compare) return cmd_compare(dir_a, dir_b, std::cout, std::cerr);

  RunConfig cfg;
  try {
    cfg = load_config(config_path);
  } catch (const std::exception& e) {
    return report_error(e, std::cerr);
  }
  if (!out_dir.empty()) cfg.output.directory = out_dir;

  if (*check) return cmd_check(cfg, std::cout, std::cerr);
  if (*sim)
    return cmd_simulate(cfg, restart_path.empty() ? std::nullopt : std::optional<std::filesystem::path>(restart_path),
                        std::cout, std::cerr);
  if (*steady) return cmd_steady(cfg, std::cout, std::cerr);
  static const std::map<std::string, StudyKind> kinds{
      {"d", StudyKind::d}, {"b", StudyKind::b}, {"grid", StudyKind::grid}, {"dt", StudyKind::dt}};
  return cmd_study(cfg, kinds.at(kind_name), std::cout, std::cerr);
}
