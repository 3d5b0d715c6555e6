#include "klab/commands.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>
#include <string>

int main(int argc, char** argv) {
  CLI::App app{"Kinetic Langevin toolkit: equilibrium, Fokker-Planck, SDE, entropy and spectral audits"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(klab::artifact_version));

  const std::map<klab::Subcommand, std::string> help = {
      {klab::Subcommand::equilibrium_check, "partition function, Laplace ratio, stationarity of f*"},
      {klab::Subcommand::evolve_fpke, "evolve a density with the Fokker-Planck solver"},
      {klab::Subcommand::simulate_sde, "Euler-Maruyama ensemble with moment traces"},
      {klab::Subcommand::entropy_trace, "entropy triple, dissipation and Pinsker bounds along a run"},
      {klab::Subcommand::break_analysis, "derivatives of F, G, H at an entropy dissipation break"},
      {klab::Subcommand::spectrum, "linearized operators and their spectra"},
      {klab::Subcommand::cross_validate, "Fokker-Planck density against an SDE histogram"},
  };
  std::map<CLI::App*, klab::Subcommand> which;
  std::string config;
  for (const auto cmd : klab::all_subcommands()) {
    auto* sub = app.add_subcommand(std::string(klab::to_string(cmd)), help.at(cmd));
    sub->add_option("config", config, "JSON config file")->required();
    which[sub] = cmd;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  for (const auto& [sub, cmd] : which)
    if (sub->parsed()) return klab::run_subcommand(cmd, std::filesystem::path(config), std::cerr);
  return 2;
}
