#include "klab/commands.hpp"
#include "klab/field_io.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

using namespace klab;
namespace fs = std::filesystem;

namespace {

const fs::path config_dir = KLAB_TEST_CONFIG_DIR;

fs::path out_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "klab_cli_test" / name;
  fs::remove_all(p);
  return p;
}

int run(Subcommand cmd, const std::string& config, const fs::path& out) {
  setenv("KLAB_OUTPUT_DIR", out.c_str(), 1);
  std::ostringstream log;
  const int rc = run_subcommand(cmd, config_dir / config, log);
  unsetenv("KLAB_OUTPUT_DIR");
  if (rc != 0) MESSAGE(log.str());
  return rc;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Manifest, resolved config and every listed artifact exist.
Json check_outputs(const fs::path& out, Subcommand cmd) {
  REQUIRE(fs::exists(out / "manifest.json"));
  CHECK(fs::exists(out / "resolved_config.json"));
  const Json m = read_json(out / "manifest.json");
  CHECK(m.at("artifact_version") == std::string(artifact_version));
  CHECK(m.at("subcommand") == std::string(to_string(cmd)));
  CHECK(m.at("config_hash").get<std::string>().rfind("fnv1a64:", 0) == 0);
  CHECK(m.at("config_hash") == config_hash(read_json(out / "resolved_config.json")));
  for (const auto& a : m.at("artifacts")) CHECK_MESSAGE(fs::exists(out / a.get<std::string>()), a);
  return m;
}

}  // namespace

TEST_CASE("equilibrium-check") {
  const fs::path out = out_dir("eq");
  CHECK(run(Subcommand::equilibrium_check, "harmonic_equilibrium.json", out) == 0);
  const Json m = check_outputs(out, Subcommand::equilibrium_check);
  CHECK(m.at("status") == "pass");
  CHECK(m.at("exit_code") == 0);
  const Json e = read_json(out / "equilibrium.json");
  CHECK(std::abs(e.at("ratio").get<double>() - 1.0) < 1e-8);
  CHECK(fs::exists(out / "f_star.json"));
}

TEST_CASE("an audit failure exits with 1") {
  const fs::path out = out_dir("eq_fail");
  CHECK(run(Subcommand::equilibrium_check, "pendulum_equilibrium.json", out) == 1);
  const Json m = check_outputs(out, Subcommand::equilibrium_check);
  CHECK(m.at("status") == "fail");
  bool failed = false;
  for (const auto& a : m.at("audits")) failed = failed || !a.at("pass").get<bool>();
  CHECK(failed);
}

TEST_CASE("schema errors exit with 2") {
  const fs::path out = out_dir("schema");
  CHECK(run(Subcommand::equilibrium_check, "missing_beta.json", out) == 2);
  const Json m = read_json(out / "manifest.json");
  CHECK(m.at("status") == "schema_error");
  CHECK(m.at("error").get<std::string>().find("model.beta") != std::string::npos);
  CHECK(!fs::exists(out / "resolved_config.json"));
  CHECK(run(Subcommand::equilibrium_check, "no_such_file.json", out_dir("nofile")) == 2);
  // Grid subcommands need one degree of freedom.
  CHECK(run(Subcommand::evolve_fpke, "sde_2d.json", out_dir("dim")) == 2);
}

TEST_CASE("evolve-fpke is bitwise reproducible") {
  const fs::path a = out_dir("evolve_a"), b = out_dir("evolve_b");
  CHECK(run(Subcommand::evolve_fpke, "evolve_small.json", a) == 0);
  CHECK(run(Subcommand::evolve_fpke, "evolve_small.json", b) == 0);
  check_outputs(a, Subcommand::evolve_fpke);
  CHECK(fs::exists(a / "final.bin"));
  CHECK(fs::exists(a / "snapshots"));
  CHECK(slurp(a / "final.bin") == slurp(b / "final.bin"));
  CHECK(slurp(a / "diagnostics.csv") == slurp(b / "diagnostics.csv"));
  const Json r = read_json(a / "resolved_config.json");
  CHECK(r.at("run").at("dt").is_number());
  const FieldFile f = read_field(a / "final.json");
  CHECK(f.field.t == doctest::Approx(0.5));
}

TEST_CASE("entropy-trace") {
  const fs::path out = out_dir("entropy");
  CHECK(run(Subcommand::entropy_trace, "entropy_small.json", out) == 0);
  check_outputs(out, Subcommand::entropy_trace);
  const std::string csv = slurp(out / "entropy.csv");
  CHECK(csv.rfind("t,F,G,H,decomp_residual,diss_rate,pinsker_f,pinsker_g,pinsker_rho\n", 0) == 0);
}

TEST_CASE("simulate-sde") {
  const fs::path a = out_dir("sde_a"), b = out_dir("sde_b");
  CHECK(run(Subcommand::simulate_sde, "sde_small.json", a) == 0);
  CHECK(run(Subcommand::simulate_sde, "sde_small.json", b) == 0);
  check_outputs(a, Subcommand::simulate_sde);
  CHECK(slurp(a / "moments.csv") == slurp(b / "moments.csv"));
  CHECK(fs::exists(a / "histogram.json"));
  const MatrixFile e = read_matrix(a / "ensemble.json");
  CHECK(e.rows == 2000);
  CHECK(e.cols == 2);
  CHECK(run(Subcommand::simulate_sde, "sde_2d.json", out_dir("sde_2d")) == 0);
}

TEST_CASE("break-analysis") {
  const fs::path out = out_dir("break");
  CHECK(run(Subcommand::break_analysis, "break_small.json", out) == 0);
  check_outputs(out, Subcommand::break_analysis);
  CHECK(read_json(out / "break.json").at("status") == "break identities hold");

  const fs::path eq = out_dir("break_eq");
  CHECK(run(Subcommand::break_analysis, "break_equilibrium.json", eq) == 0);
  CHECK(read_json(eq / "break.json").at("status") == "equilibrium reached, tau = 0");
}

TEST_CASE("spectrum") {
  const fs::path out = out_dir("spectrum");
  CHECK(run(Subcommand::spectrum, "spectrum_small.json", out) == 0);
  check_outputs(out, Subcommand::spectrum);
  CHECK(slurp(out / "spectrum.csv").rfind("re,im,source,pair_id\n", 0) == 0);
}

TEST_CASE("cross-validate") {
  const fs::path out = out_dir("crossval");
  CHECK(run(Subcommand::cross_validate, "crossval_small.json", out) == 0);
  check_outputs(out, Subcommand::cross_validate);
  const Json c = read_json(out / "crossval.json");
  CHECK(c.at("l1").get<double>() < 0.05);
}
