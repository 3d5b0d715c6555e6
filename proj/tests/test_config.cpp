#include "klab/config.hpp"
#include "klab/error.hpp"

#include <doctest.h>

#include <cstdlib>
#include <string>

using namespace klab;

namespace {

Json base() {
  return Json::parse(R"({
    "model": {"family": "pendulum", "beta": 1.0, "params": {"v0": 1.0}},
    "grid": {"nq": 32, "np": 32},
    "run": {"t_end": 0.5}
  })");
}

std::string schema_message(Subcommand cmd, const Json& doc) {
  try {
    parse_config(cmd, doc);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::schema);
    return e.what();
  }
  FAIL("config accepted");
  return {};
}

struct EnvGuard {
  EnvGuard() { unsetenv("KLAB_OUTPUT_DIR"); }
  ~EnvGuard() { unsetenv("KLAB_OUTPUT_DIR"); }
};

}  // namespace

TEST_CASE("subcommand names") {
  for (Subcommand c : all_subcommands()) CHECK(parse_subcommand(to_string(c)) == c);
  CHECK(all_subcommands().size() == 7);
  CHECK(to_string(Subcommand::cross_validate) == "cross-validate");
  CHECK(!parse_subcommand("evolve"));
}

TEST_CASE("defaults are filled in and auto values resolved") {
  EnvGuard env;
  const ExperimentConfig c = parse_config(Subcommand::evolve_fpke, base());
  CHECK(c.nq == 32);
  CHECK(c.p_max == doctest::Approx(7.0));
  CHECK(c.resolved.at("grid").at("p_max") == c.p_max);
  CHECK(c.resolved.at("model").at("space") == "circle");
  CHECK(c.run().at("dt") == "auto");
  CHECK(c.run().at("snapshot_every") == 100);
  CHECK(c.run().at("initial_condition").at("type") == "break");
  CHECK(c.output.directory == "klab_out");
  CHECK(c.output.csv);
  CHECK(!c.output.binary);

  Json h = base();
  h["model"] = Json::parse(R"({"family": "harmonic", "beta": 2.0})");
  h.erase("run");
  const ExperimentConfig ch = parse_config(Subcommand::equilibrium_check, h);
  CHECK(ch.resolved.at("model").at("bounds").size() == 2);
  CHECK(ch.run().at("laplace_tolerance") == 1e-8);
  CHECK(ch.model.space.axes[0].topology == Topology::line);
}

TEST_CASE("schema violations name the key") {
  EnvGuard env;
  Json d = base();
  d["model"].erase("beta");
  CHECK(schema_message(Subcommand::evolve_fpke, d).find("model.beta") != std::string::npos);

  d = base();
  d["grid"]["nqq"] = 3;
  CHECK(schema_message(Subcommand::evolve_fpke, d).find("grid.nqq: unknown key") != std::string::npos);

  d = base();
  d["grid"]["nq"] = "many";
  CHECK(schema_message(Subcommand::evolve_fpke, d).find("grid.nq") != std::string::npos);

  d = base();
  d["grid"]["nq"] = 8;
  CHECK(schema_message(Subcommand::evolve_fpke, d).find("grid.nq") != std::string::npos);

  d = base();
  d["model"]["beta"] = -1.0;
  CHECK(schema_message(Subcommand::evolve_fpke, d).find("model.beta") != std::string::npos);

  d = base();
  d["run"].erase("t_end");
  CHECK(schema_message(Subcommand::evolve_fpke, d).find("run.t_end") != std::string::npos);

  d = base();
  d["model"]["family"] = "variable_mass_pendulum";
  d["model"]["params"] = Json::parse(R"({"mu": 1.5})");
  CHECK(schema_message(Subcommand::evolve_fpke, d).find("model.params.mu") != std::string::npos);

  d = base();
  d["output"] = Json::parse(R"({"formats": ["csv", "xml"]})");
  CHECK(schema_message(Subcommand::evolve_fpke, d).find("output.formats[1]") != std::string::npos);

  d = base();
  d["model"]["params"]["dim"] = 2;
  CHECK(schema_message(Subcommand::evolve_fpke, d).find("dim") != std::string::npos);
  CHECK_NOTHROW(parse_config(Subcommand::simulate_sde, d));
}

TEST_CASE("config hash depends only on the resolved content") {
  EnvGuard env;
  const ExperimentConfig a = parse_config(Subcommand::evolve_fpke, base());
  Json spelled = base();
  spelled["run"]["snapshot_every"] = 100;  // the default, written out
  const ExperimentConfig b = parse_config(Subcommand::evolve_fpke, spelled);
  CHECK(config_hash(a.resolved) == config_hash(b.resolved));
  Json other = base();
  other["run"]["t_end"] = 0.75;
  CHECK(config_hash(parse_config(Subcommand::evolve_fpke, other).resolved) != config_hash(a.resolved));
  CHECK(config_hash(a.resolved).rfind("fnv1a64:", 0) == 0);
  CHECK(config_hash(a.resolved).size() == 8 + 16);
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("output directory override") {
  EnvGuard env;
  setenv("KLAB_OUTPUT_DIR", "/tmp/klab_env_dir", 1);
  const ExperimentConfig c = parse_config(Subcommand::evolve_fpke, base());
  CHECK(c.output.directory == "/tmp/klab_env_dir");
  CHECK(c.resolved.at("output").at("directory") == "/tmp/klab_env_dir");
  CHECK(output_directory_hint(Json()) == "/tmp/klab_env_dir");
  unsetenv("KLAB_OUTPUT_DIR");
  Json d = base();
  d["output"] = Json::parse(R"({"directory": "elsewhere"})");
  CHECK(output_directory_hint(d) == "elsewhere");
  CHECK(output_directory_hint(Json()) == "klab_out");
}

TEST_CASE("tabulated models") {
  EnvGuard env;
  Json d = base();
  d["model"] = Json::parse(R"({"family": "tabulated", "beta": 1.0,
    "params": {"q": [-4, -2, 0, 2, 4], "V": [8, 2, 0, 2, 8], "M": [1, 1, 1, 1, 1], "D": [1, 1, 1, 1, 1]}})");
  const ExperimentConfig c = parse_config(Subcommand::evolve_fpke, d);
  CHECK(c.resolved.at("model").at("bounds") == Json::array({-4.0, 4.0}));
  d["model"]["params"]["V"] = Json::array({8, 2, 0, 2});
  CHECK(schema_message(Subcommand::evolve_fpke, d).find("model.params.V") != std::string::npos);
}
