#pragma once

#include "klab/field_io.hpp"
#include "klab/grid.hpp"
#include "klab/model.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace klab {

enum class Subcommand {
  equilibrium_check,
  evolve_fpke,
  simulate_sde,
  entropy_trace,
  break_analysis,
  spectrum,
  cross_validate,
};

std::optional<Subcommand> parse_subcommand(std::string_view name);
std::string_view to_string(Subcommand cmd);
const std::vector<Subcommand>& all_subcommands();

struct OutputConfig {
  std::filesystem::path directory;
  bool csv = true;
  bool json = true;
  bool binary = false;
  // Field dumps use binary when it is listed, CSV otherwise.
  FieldFormat field_format() const { return binary ? FieldFormat::binary : FieldFormat::csv; }
};

// A validated experiment. `resolved` holds every section with defaults
// filled in and "auto" choices replaced by their values.
struct ExperimentConfig {
  Subcommand command = Subcommand::equilibrium_check;
  Json resolved;
  ModelSpec model;
  int nq = 0, np = 0;
  double p_max = 0.0;
  OutputConfig output;

  const Json& run() const { return resolved.at("run"); }
  PhaseGrid make_grid() const { return PhaseGrid::for_model(model, nq, np, p_max); }
};

// Schema violations (unknown or missing keys, wrong types, out-of-range
// values) raise ErrorKind::schema naming the key path. The output directory
// is taken from KLAB_OUTPUT_DIR when set.
ExperimentConfig parse_config(Subcommand cmd, const Json& doc);
ExperimentConfig load_config(Subcommand cmd, const std::filesystem::path& path);

// Output directory a config would use, for manifests of runs that fail
// validation. Falls back to "klab_out".
std::filesystem::path output_directory_hint(const Json& doc);

std::uint64_t fnv1a64(std::string_view bytes);
// "fnv1a64:<16 hex digits>" of the compact dump of the resolved config.
std::string config_hash(const Json& resolved);

}  // namespace klab
