#pragma once

#include "klab/config.hpp"
#include "klab/equilibrium.hpp"
#include "klab/sde.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace klab {

inline constexpr std::string_view artifact_version = "0.1.0";

struct AuditResult {
  std::string name;
  bool pass = false;
  double value = 0.0;
  double threshold = 0.0;
  std::string detail;
};

struct RunSummary {
  std::vector<AuditResult> audits;
  std::vector<std::string> warnings;
  std::vector<std::string> artifacts;  // file names relative to the output directory
  std::string message;

  bool passed() const;
};

// Builds the initial density of an evolution run from a resolved
// "initial_condition" object.
DensityField make_initial_density(const Json& spec, const EquilibriumState& eq, const ModelSpec& model);
// Builds an initial ensemble from a resolved "initial" object.
Ensemble make_initial_ensemble(const Json& spec, const ModelSpec& model, std::size_t count, std::uint64_t seed);

// Runs a validated experiment and writes its artifacts. Audit failures are
// reported in the summary; numerical errors propagate. Choices resolved at
// run time (such as an "auto" step) are written back into cfg.resolved.
RunSummary execute(ExperimentConfig& cfg, std::ostream& log);

// Full pipeline with the exit-status contract: 0 when every audit passes, 1
// on an audit failure or numerical error, 2 on schema violations. The
// output directory always receives manifest.json, and resolved_config.json
// whenever the config validated.
int run_subcommand(Subcommand cmd, const std::filesystem::path& config_path, std::ostream& log);
int run_subcommand(Subcommand cmd, const Json& doc, std::ostream& log);

}  // namespace klab
