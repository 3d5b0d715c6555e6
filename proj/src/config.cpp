#include "klab/config.hpp"

#include "klab/equilibrium.hpp"
#include "klab/error.hpp"

#include <array>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>

namespace klab {

namespace fs = std::filesystem;

namespace {

constexpr std::array<std::pair<Subcommand, std::string_view>, 7> kNames{{
    {Subcommand::equilibrium_check, "equilibrium-check"},
    {Subcommand::evolve_fpke, "evolve-fpke"},
    {Subcommand::simulate_sde, "simulate-sde"},
    {Subcommand::entropy_trace, "entropy-trace"},
    {Subcommand::break_analysis, "break-analysis"},
    {Subcommand::spectrum, "spectrum"},
    {Subcommand::cross_validate, "cross-validate"},
}};

[[noreturn]] void schema_error(const std::string& path, const std::string& msg) {
  throw Error(ErrorKind::schema, path + ": " + msg);
}

std::string type_name(const Json& j) { return j.type_name(); }

// One object of the config tree. Reads record the key as known; finish()
// rejects the rest and returns the object with defaults filled in.
class Section {
 public:
  Section(const Json& in, std::string path) : path_(std::move(path)) {
    if (in.is_null()) {
      in_ = Json::object();
    } else if (!in.is_object()) {
      schema_error(path_, "expected an object, got " + type_name(in));
    } else {
      in_ = in;
    }
  }

  const std::string& path() const { return path_; }
  bool has(const std::string& key) const { return in_.contains(key); }
  // Missing, null or the string "auto".
  bool is_auto(const std::string& key) const {
    return !in_.contains(key) || in_[key].is_null() || (in_[key].is_string() && in_[key] == "auto");
  }
  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  double number(const std::string& key, std::optional<double> def, double lo = -INFINITY, double hi = INFINITY,
                bool open_lo = false) {
    double v;
    if (!in_.contains(key)) {
      if (!def) schema_error(key_path(key), "required key missing");
      v = *def;
    } else {
      const Json& j = in_[key];
      if (!j.is_number()) schema_error(key_path(key), "expected a number, got " + type_name(j));
      v = j.get<double>();
      if (!std::isfinite(v)) schema_error(key_path(key), "must be finite");
    }
    if (v < lo || v > hi || (open_lo && v == lo))
      schema_error(key_path(key), "value " + format_double(v) + " outside " + (open_lo ? "(" : "[") +
                                      format_double(lo) + ", " + format_double(hi) + "]");
    out_[key] = v;
    return v;
  }

  long long integer(const std::string& key, std::optional<long long> def, long long lo = 0,
                    long long hi = (1LL << 53)) {
    long long v;
    if (!in_.contains(key)) {
      if (!def) schema_error(key_path(key), "required key missing");
      v = *def;
    } else {
      const Json& j = in_[key];
      if (j.is_number_integer()) {
        v = j.get<long long>();
      } else if (j.is_number_float() && std::floor(j.get<double>()) == j.get<double>() &&
                 std::abs(j.get<double>()) < 9e15) {
        v = static_cast<long long>(j.get<double>());
      } else {
        schema_error(key_path(key), "expected an integer, got " + type_name(j));
      }
    }
    if (v < lo || v > hi)
      schema_error(key_path(key), "value " + std::to_string(v) + " outside [" + std::to_string(lo) + ", " +
                                      std::to_string(hi) + "]");
    out_[key] = v;
    return v;
  }

  bool boolean(const std::string& key, bool def) {
    bool v = def;
    if (in_.contains(key)) {
      if (!in_[key].is_boolean()) schema_error(key_path(key), "expected true or false");
      v = in_[key].get<bool>();
    }
    out_[key] = v;
    return v;
  }

  std::string choice(const std::string& key, std::optional<std::string> def, const std::vector<std::string>& allowed) {
    std::string v;
    if (!in_.contains(key)) {
      if (!def) schema_error(key_path(key), "required key missing");
      v = *def;
    } else {
      if (!in_[key].is_string()) schema_error(key_path(key), "expected a string, got " + type_name(in_[key]));
      v = in_[key].get<std::string>();
    }
    if (std::find(allowed.begin(), allowed.end(), v) == allowed.end()) {
      std::string list;
      for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
      schema_error(key_path(key), "'" + v + "' is not one of {" + list + "}");
    }
    out_[key] = v;
    return v;
  }

  std::string text(const std::string& key, const std::string& def) {
    std::string v = def;
    if (in_.contains(key)) {
      if (!in_[key].is_string()) schema_error(key_path(key), "expected a string, got " + type_name(in_[key]));
      v = in_[key].get<std::string>();
    }
    out_[key] = v;
    return v;
  }

  // Number, or the string "auto" (returns nullopt).
  std::optional<double> number_or_auto(const std::string& key, double lo, bool open_lo) {
    if (!in_.contains(key) || (in_[key].is_string() && in_[key] == "auto")) {
      out_[key] = "auto";
      return std::nullopt;
    }
    if (in_[key].is_string()) schema_error(key_path(key), "expected a number or \"auto\"");
    return number(key, std::nullopt, lo, INFINITY, open_lo);
  }

  // Array of numbers; a bare number is accepted when size == 1.
  std::vector<double> numbers(const std::string& key, std::optional<std::vector<double>> def, std::size_t size) {
    std::vector<double> v;
    if (!in_.contains(key)) {
      if (!def) schema_error(key_path(key), "required key missing");
      v = *def;
    } else {
      const Json& j = in_[key];
      if (j.is_number() && size == 1) {
        v = {j.get<double>()};
      } else if (j.is_array()) {
        for (std::size_t k = 0; k < j.size(); ++k) {
          if (!j[k].is_number()) schema_error(key_path(key) + "[" + std::to_string(k) + "]", "expected a number");
          v.push_back(j[k].get<double>());
        }
      } else {
        schema_error(key_path(key), "expected an array of numbers, got " + type_name(j));
      }
    }
    if (size > 0 && v.size() != size)
      schema_error(key_path(key), "expected " + std::to_string(size) + " values, got " + std::to_string(v.size()));
    for (double x : v)
      if (!std::isfinite(x)) schema_error(key_path(key), "values must be finite");
    out_[key] = v;
    return v;
  }

  Section child(const std::string& key) const { return Section(in_.contains(key) ? in_.at(key) : Json(), key_path(key)); }
  void put(const std::string& key, Json value) { out_[key] = std::move(value); }

  Json finish() {
    for (const auto& [k, v] : in_.items())
      if (!out_.contains(k)) schema_error(key_path(k), "unknown key");
    return out_;
  }

 private:
  std::string path_;
  Json in_;
  Json out_ = Json::object();
};

struct ModelBuild {
  ModelSpec model;
  Json resolved;
};

ModelBuild build_model(Section s) {
  const std::string family =
      s.choice("family", std::nullopt,
               {"harmonic", "pendulum", "variable_mass_pendulum", "exponential_mass", "tabulated"});
  const double beta = s.number("beta", std::nullopt, 0.0, INFINITY, true);
  Section ps = s.child("params");
  std::shared_ptr<const Family> fam;
  Topology topo = Topology::line;
  int n = 1;
  std::optional<std::pair<double, double>> table_range;
  std::shared_ptr<const Family> bounds_family;  // one-dimensional stand-in for line bounds
  if (family == "harmonic") {
    n = static_cast<int>(ps.integer("dim", 1, 1, 64));
    const double kappa = ps.number("kappa", 1.0, 0.0, INFINITY, true);
    const double mass = ps.number("mass", 1.0, 0.0, INFINITY, true);
    const double diffusion = ps.number("diffusion", 1.0, 0.0, INFINITY, true);
    fam = harmonic_family(n, kappa, mass, diffusion);
    bounds_family = harmonic_family(1, kappa, mass, diffusion);
  } else if (family == "pendulum") {
    n = static_cast<int>(ps.integer("dim", 1, 1, 64));
    fam = pendulum_family(n, ps.number("v0", 1.0, 0.0, INFINITY, true), ps.number("mass", 1.0, 0.0, INFINITY, true),
                          ps.number("diffusion", 1.0, 0.0, INFINITY, true));
    topo = Topology::circle;
  } else if (family == "variable_mass_pendulum") {
    const double v0 = ps.number("v0", 1.0, 0.0, INFINITY, true);
    const double m0 = ps.number("m0", 1.0, 0.0, INFINITY, true);
    const double mu = ps.number("mu", 0.3);
    if (!(std::abs(mu) < 1.0)) schema_error(ps.key_path("mu"), "|mu| must be below 1");
    const double d0 = ps.number("d0", 1.0, 0.0, INFINITY, true);
    const double ds = ps.number("d_sin2", 0.0, 0.0);
    fam = variable_mass_pendulum_family(v0, m0, mu, d0, ds);
    topo = Topology::circle;
  } else if (family == "exponential_mass") {
    fam = exponential_mass_family(ps.number("v0", 1.0, 0.0, INFINITY, true), ps.number("d0", 1.0, 0.0, INFINITY, true));
  } else {
    Table1 t;
    t.q = ps.numbers("q", std::nullopt, 0);
    t.V = ps.numbers("V", std::nullopt, t.q.size());
    t.M = ps.numbers("M", std::nullopt, t.q.size());
    t.D = ps.numbers("D", std::nullopt, t.q.size());
    t.periodic = ps.boolean("periodic", false);
    if (t.q.size() < 5) schema_error(ps.key_path("q"), "a table needs at least 5 nodes");
    fam = tabulated_family(t);
    topo = t.periodic ? Topology::circle : Topology::line;
    if (!t.periodic) table_range = std::make_pair(t.q.front(), t.q.back());
  }
  s.put("params", ps.finish());

  const std::string space =
      s.choice("space", std::string(topo == Topology::circle ? "circle" : "line"), {"line", "circle"});
  PositionSpace ps_space;
  if (space == "circle") {
    if (s.has("bounds")) schema_error(s.key_path("bounds"), "circle spaces take no bounds");
    ps_space = PositionSpace::circle(n);
  } else {
    double lo, hi;
    if (!s.is_auto("bounds")) {
      const auto b = s.numbers("bounds", std::nullopt, 2);
      lo = b[0];
      hi = b[1];
      if (!(hi > lo)) schema_error(s.key_path("bounds"), "needs lo < hi");
    } else {
      std::tie(lo, hi) = table_range ? *table_range : default_line_bounds(bounds_family ? *bounds_family : *fam, beta);
      s.put("bounds", Json::array({lo, hi}));
    }
    ps_space = PositionSpace::line(n, lo, hi);
  }
  ModelBuild mb;
  mb.model = make_model(fam, ps_space, beta, n == 1 ? sample_nodes(ps_space, 64) : std::vector<Vec>{});
  mb.resolved = s.finish();
  return mb;
}

Json parse_fpke_initial(Section s, int depth = 0) {
  const std::string type = s.choice("type", std::string("break"),
                                    {"equilibrium", "gaussian", "break", "conditional_gaussian", "perturbed", "mixture"});
  if (type == "gaussian") {
    s.number("q", std::nullopt);
    s.number("p", 0.0);
    s.number("sd_q", std::nullopt, 0.0, INFINITY, true);
    s.number("sd_p", std::nullopt, 0.0, INFINITY, true);
    s.number("corr", 0.0, -0.999, 0.999);
  } else if (type == "break") {
    s.choice("kind", std::string("tilt"), {"tilt", "shift"});
    s.number("amplitude", 0.2);
    s.integer("harmonic", 1, 1, 1000);
  } else if (type == "conditional_gaussian") {
    s.number("tilt", 0.5, -0.99, 0.99);
    s.number("mean_amplitude", 0.8);
    s.number("variance_scale", 1.5, 0.0, INFINITY, true);
  } else if (type == "perturbed") {
    s.number("amplitude", 0.1);
  } else if (type == "mixture") {
    if (depth > 0) schema_error(s.key_path("type"), "mixtures do not nest");
    s.number("weight", 0.5, 0.0, 1.0);
    if (!s.has("component")) schema_error(s.key_path("component"), "required key missing");
    s.put("component", parse_fpke_initial(s.child("component"), depth + 1));
  }
  return s.finish();
}

Json parse_sde_initial(Section s, int n, bool fpke_compatible) {
  std::vector<std::string> types = {"gaussian", "equilibrium"};
  if (!fpke_compatible) types.insert(types.begin(), "point");
  const std::string type = s.choice("type", std::string(fpke_compatible ? "gaussian" : "point"), types);
  if (type == "equilibrium") {
    if (n != 1) schema_error(s.key_path("type"), "equilibrium draws are implemented for dim = 1");
  } else {
    s.numbers("q", std::vector<double>(n, type == "point" ? 0.5 : 1.0), n);
    s.numbers("p", std::vector<double>(n, 0.0), n);
    if (type == "gaussian") {
      s.number("sd_q", 0.5, 0.0, INFINITY, true);
      s.number("sd_p", 0.5, 0.0, INFINITY, true);
    }
  }
  return s.finish();
}

void evolution_keys(Section& r, double default_every) {
  r.number_or_auto("dt", 0.0, true);
  r.number("t_end", std::nullopt, 0.0, INFINITY, true);
  r.integer("snapshot_every", static_cast<long long>(default_every), 1);
  r.put("initial_condition", parse_fpke_initial(r.child("initial_condition")));
}

Json parse_run(Subcommand cmd, Section r, const ModelSpec& model, int grid_nq, int grid_np) {
  const int n = model.dim();
  switch (cmd) {
    case Subcommand::equilibrium_check:
      r.boolean("refine", true);
      r.number("moment_tolerance", 1e-8, 0.0, INFINITY, true);
      r.number("order_min", 1.5, 0.0);
      if (!r.is_auto("laplace_tolerance")) {
        r.number("laplace_tolerance", std::nullopt, 0.0, INFINITY, true);
      } else {
        const bool closed_form = model.family->name() == "harmonic";
        r.put("laplace_tolerance", closed_form ? Json(1e-8) : Json(nullptr));
      }
      break;
    case Subcommand::evolve_fpke:
      evolution_keys(r, 100);
      r.boolean("write_snapshots", true);
      break;
    case Subcommand::entropy_trace:
      evolution_keys(r, 1);
      r.boolean("write_snapshots", false);
      r.number("decomposition_tolerance", 1e-9, 0.0, INFINITY, true);
      r.number("negativity_tolerance", 1e-10, 0.0);
      r.number("monotonicity_tolerance", 1e-9, 0.0);
      r.number("dissipation_tolerance", 0.01, 0.0, INFINITY, true);
      r.number("dissipation_floor", 1e-6, 0.0);
      break;
    case Subcommand::simulate_sde: {
      r.integer("particles", 1000, 1, 100000000);
      r.number("dt", 1e-3, 0.0, INFINITY, true);
      r.number("t_end", std::nullopt, 0.0, INFINITY, true);
      r.integer("seed", 1, 0, (1LL << 53));
      r.integer("sample_every", 10, 1);
      r.put("initial", parse_sde_initial(r.child("initial"), n, false));
      r.boolean("dump_ensemble", false);
      Section h = r.child("histogram");
      const bool on = h.boolean("enabled", false);
      if (on && n != 1) schema_error(h.key_path("enabled"), "histograms are implemented for dim = 1");
      h.integer("nq", 32, 1, 100000);
      h.integer("np", 32, 1, 100000);
      r.put("histogram", h.finish());
      break;
    }
    case Subcommand::break_analysis:
      r.choice("kind", std::string("tilt"), {"tilt", "shift"});
      r.number("amplitude", 0.2);
      r.integer("harmonic", 1, 1, 1000);
      r.number("window", 0.0, 0.0);
      r.integer("samples", 9, 5, 10000);
      r.integer("substeps", 0, 0, 1000000);
      break;
    case Subcommand::spectrum:
      r.integer("stencil_order", 8, 2, 8);
      r.integer("pairs", 30, 1, 100000);
      r.integer("probes", 100, 1, 1000000);
      r.integer("seed", 7, 0, (1LL << 53));
      r.number("high_frequency_limit", 0.5, 0.0, 1.0, true);
      r.number("adjoint_tolerance", 5e-3, 0.0, INFINITY, true);
      r.number("pairing_tolerance", 1e-3, 0.0, INFINITY, true);
      r.integer("pairing_modes", 10, 1, 100000);
      r.number("quad_tolerance", 1e-6, 0.0, INFINITY, true);
      r.number("zero_psi_tolerance", 1e-6, 0.0, INFINITY, true);
      r.number("positive_tolerance", 1e-6, 0.0, INFINITY, true);
      break;
    case Subcommand::cross_validate: {
      r.integer("particles", 100000, 100, 100000000);
      r.number("dt", 0.0025, 0.0, INFINITY, true);
      r.number("t_end", 20.0, 0.0, INFINITY, true);
      r.integer("seed", 1, 0, (1LL << 53));
      r.integer("sample_every", 400, 1);
      r.number_or_auto("fpke_dt", 0.0, true);
      r.put("initial", parse_sde_initial(r.child("initial"), n, true));
      const auto c = r.numbers("coarsen", std::vector<double>{8.0, 8.0}, 2);
      for (double x : c)
        if (!(x >= 1.0) || std::floor(x) != x) schema_error(r.key_path("coarsen"), "factors must be positive integers");
      const int axis[2] = {grid_nq, grid_np};
      for (int k = 0; k < 2; ++k) {
        const int f = static_cast<int>(c[k]);
        if (axis[k] % f != 0 || axis[k] / f < 16)
          schema_error(r.key_path("coarsen"), "factors must divide the grid and leave at least 16 bins per axis");
      }
      r.number("l1_tolerance", 0.05, 0.0, INFINITY, true);
      r.number("se_threshold", 3.0, 0.0, INFINITY, true);
      r.boolean("stationary", true);
      break;
    }
  }
  return r.finish();
}

}  // namespace

std::optional<Subcommand> parse_subcommand(std::string_view name) {
  for (const auto& [c, s] : kNames)
    if (s == name) return c;
  return std::nullopt;
}

std::string_view to_string(Subcommand cmd) {
  for (const auto& [c, s] : kNames)
    if (c == cmd) return s;
  return "unknown";
}

const std::vector<Subcommand>& all_subcommands() {
  static const std::vector<Subcommand> v = [] {
    std::vector<Subcommand> out;
    for (const auto& [c, s] : kNames) out.push_back(c);
    return out;
  }();
  return v;
}

ExperimentConfig parse_config(Subcommand cmd, const Json& doc) {
  Section top(doc, "");
  ExperimentConfig cfg;
  cfg.command = cmd;
  ModelBuild mb = build_model(top.child("model"));
  cfg.model = mb.model;
  top.put("model", mb.resolved);
  const bool grid_based = cmd != Subcommand::simulate_sde;
  if (grid_based && cfg.model.dim() != 1)
    schema_error("model.params.dim", std::string(to_string(cmd)) + " needs dim = 1");

  Section g = top.child("grid");
  const int dn = cmd == Subcommand::spectrum ? 32 : 128;
  const int dp = cmd == Subcommand::spectrum ? 32 : 192;
  cfg.nq = static_cast<int>(g.integer("nq", dn, 16, 1 << 16));
  cfg.np = static_cast<int>(g.integer("np", dp, 16, 1 << 16));
  if (auto pm = g.number_or_auto("p_max", 0.0, true)) {
    cfg.p_max = *pm;
  } else {
    cfg.p_max = cfg.model.dim() == 1 ? default_p_max(cfg.model) : 0.0;
    if (cfg.model.dim() == 1) g.put("p_max", cfg.p_max);
  }
  top.put("grid", g.finish());

  top.put("run", parse_run(cmd, top.child("run"), cfg.model, cfg.nq, cfg.np));

  Section o = top.child("output");
  std::string dir = o.text("directory", "klab_out");
  if (const char* env = std::getenv("KLAB_OUTPUT_DIR"); env && *env) {
    dir = env;
    o.put("directory", dir);
  }
  cfg.output.directory = dir;
  std::vector<std::string> formats = {"csv", "json"};
  if (o.has("formats")) {
    formats.clear();
    Json f = doc.at("output").at("formats");
    if (!f.is_array()) schema_error("output.formats", "expected an array of strings");
    for (std::size_t k = 0; k < f.size(); ++k) {
      const std::string kp = "output.formats[" + std::to_string(k) + "]";
      if (!f[k].is_string()) schema_error(kp, "expected a string");
      const auto v = f[k].get<std::string>();
      if (v != "csv" && v != "json" && v != "binary") schema_error(kp, "'" + v + "' is not one of {csv, json, binary}");
      formats.push_back(v);
    }
  }
  cfg.output.csv = std::find(formats.begin(), formats.end(), "csv") != formats.end();
  cfg.output.json = std::find(formats.begin(), formats.end(), "json") != formats.end();
  cfg.output.binary = std::find(formats.begin(), formats.end(), "binary") != formats.end();
  o.put("formats", formats);
  top.put("output", o.finish());

  cfg.resolved = top.finish();
  return cfg;
}

ExperimentConfig load_config(Subcommand cmd, const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::schema, path.string() + ": cannot open config file");
  Json doc;
  try {
    doc = Json::parse(in, nullptr, true, true);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorKind::schema, path.string() + ": " + e.what());
  }
  return parse_config(cmd, doc);
}

fs::path output_directory_hint(const Json& doc) {
  if (const char* env = std::getenv("KLAB_OUTPUT_DIR"); env && *env) return env;
  if (doc.is_object() && doc.contains("output") && doc["output"].is_object() && doc["output"].contains("directory") &&
      doc["output"]["directory"].is_string())
    return doc["output"]["directory"].get<std::string>();
  return "klab_out";
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash(const Json& resolved) {
  const std::uint64_t h = fnv1a64(resolved.dump());
  static const char* hex = "0123456789abcdef";
  std::string s = "fnv1a64:";
  for (int k = 15; k >= 0; --k) s += hex[(h >> (4 * k)) & 0xfu];
  return s;
}

}  // namespace klab
