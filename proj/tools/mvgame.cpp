#include "mvgame/cli/commands.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <string>

using namespace mvgame;
using namespace mvgame::cli;

namespace {

struct Options {
  std::string scenario;
  std::string out;
  std::string format;
  std::optional<std::uint64_t> seed;
  std::string branch;
  bool gamma_sweep = false;
  std::string solution;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--scenario", o.scenario, "scenario file")->required();
  cmd->add_option("--out", o.out, "output path (default: [output] path, else stdout)");
  cmd->add_option("--format", o.format, "json or csv")->check(CLI::IsMember({"json", "csv"}));
  cmd->add_option("--seed", o.seed, "override the scenario seed");
  cmd->add_option("--branch", o.branch, "branch signs")->check(CLI::IsMember({"++", "+-", "-+", "--"}));
  cmd->add_flag("--gamma-sweep", o.gamma_sweep, "check the residual is identical across gamma (ex1)");
}

int write_result(const CommandResult& r, const Scenario& sc, const std::string& out_flag) {
  const std::string path = !out_flag.empty() ? out_flag : sc.output_path;
  const std::string text = !r.csv.empty() ? r.csv : r.report.dump(2) + "\n";
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    std::ofstream f(path);
    if (!f) {
      std::cerr << "error: cannot write '" << path << "'\n";
      return exit_code::config_error;
    }
    f << text;
  }
  if (!r.message.empty()) std::cerr << r.message << "\n";
  return r.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Solve and verify two-player ergodic mean-field LQ games"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  Options o;
  auto* solve = app.add_subcommand("solve", "solve the Riccati system and report the equilibrium");
  auto* verify = app.add_subcommand("verify", "solve, then run the residual and Monte Carlo checks");
  auto* residual = app.add_subcommand("residual", "evaluate residuals of a candidate solution");
  auto* simulate = app.add_subcommand("simulate", "simulate the equilibrium particle system");
  for (auto* cmd : {solve, verify, residual, simulate}) add_common(cmd, o);
  residual->add_option("--solution", o.solution, "solution file (JSON report or [solution] section)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : exit_code::config_error;
  }

  Scenario sc;
  try {
    Overrides ov;
    ov.seed = o.seed;
    if (!o.branch.empty()) ov.branch = BranchSpec::parse(o.branch);
    if (o.format == "json") ov.format = OutputFormat::Json;
    if (o.format == "csv") ov.format = OutputFormat::Csv;
    ov.gamma_sweep = o.gamma_sweep;
    sc = apply(load_scenario_file(o.scenario), ov);
    if (sc.format == OutputFormat::Csv && !simulate->parsed())
      throw ConfigError("csv output is only available for the simulate command");

    CommandResult r;
    if (solve->parsed()) r = cmd_solve(sc);
    if (verify->parsed()) r = cmd_verify(sc, o.gamma_sweep);
    if (residual->parsed())
      r = cmd_residual(sc, o.solution.empty() ? std::nullopt : std::optional<std::string>(o.solution));
    if (simulate->parsed()) r = cmd_simulate(sc);
    return write_result(r, sc, o.out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return exit_code::config_error;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return exit_code::config_error;
  } catch (const EmptyResult& e) {
    std::cerr << "no ergodic branch: " << e.what() << "\n";
    return exit_code::no_ergodic_branch;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code::solver_failed;
  }
}
