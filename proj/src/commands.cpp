#include "klab/commands.hpp"

#include "klab/entropy.hpp"
#include "klab/error.hpp"
#include "klab/fpke.hpp"
#include "klab/initial.hpp"
#include "klab/spectral.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>

namespace klab {

namespace fs = std::filesystem;

bool RunSummary::passed() const {
  return std::all_of(audits.begin(), audits.end(), [](const AuditResult& a) { return a.pass; });
}

namespace {

Json pair_json(std::complex<double> z) { return Json::array({z.real(), z.imag()}); }

// Value <= threshold audits; NaN fails.
AuditResult at_most(std::string name, double value, double threshold, std::string detail = {}) {
  return {std::move(name), value <= threshold, value, threshold, std::move(detail)};
}

struct Output {
  const ExperimentConfig& cfg;
  RunSummary& summary;

  fs::path path(const std::string& name) const { return cfg.output.directory / name; }

  void json(const std::string& name, const Json& j) const {
    write_json(path(name), j);
    summary.artifacts.push_back(name);
  }
  CsvWriter csv(const std::string& name, std::vector<std::string> header) const {
    summary.artifacts.push_back(name);
    return CsvWriter(path(name), std::move(header));
  }
  void field(const std::string& stem, const std::string& name, const DensityField& f) const {
    for (const auto& p : write_field(cfg.output.directory, stem, name, f, cfg.output.field_format()))
      summary.artifacts.push_back(fs::relative(p, cfg.output.directory).string());
  }
  void matrix(const std::string& stem, const MatrixFile& m) const {
    for (const auto& p : write_matrix(cfg.output.directory, stem, m, cfg.output.field_format()))
      summary.artifacts.push_back(fs::relative(p, cfg.output.directory).string());
  }
};

std::string snapshot_stem(long index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "snapshots/snapshot_%06ld", index);
  return buf;
}

BreakSpec break_spec_from(const Json& j) {
  BreakSpec s;
  s.kind = j.at("kind") == "shift" ? BreakSpec::Kind::shift : BreakSpec::Kind::tilt;
  s.amplitude = j.at("amplitude").get<double>();
  s.harmonic = j.at("harmonic").get<int>();
  return s;
}

double resolve_fpke_dt(ExperimentConfig& cfg, const FokkerPlanck& fp, const char* key) {
  Json& run = cfg.resolved["run"];
  if (run.at(key).is_string()) {
    const double dt = fp.stable_dt(0.4);
    run[key] = dt;
    return dt;
  }
  return run.at(key).get<double>();
}

void evolution_audits(const EvolutionResult& res, RunSummary& s) {
  s.audits.push_back({"stability", !res.aborted, res.aborted ? 1.0 : 0.0, 0.0,
                      res.aborted ? res.abort_reason : "no negativity or blow-up"});
  s.audits.push_back(at_most("mass conservation per step", res.max_step_mass_drift, 1e-12));
  if (res.boundary_warning) s.warnings.push_back("boundary-cell mass exceeded 1e-8");
}

Json evolution_json(const EvolutionResult& res) {
  return Json{{"dt", res.dt},
              {"steps", res.steps},
              {"t_final", res.final_state.t},
              {"max_step_mass_drift", res.max_step_mass_drift},
              {"total_mass_drift", res.total_mass_drift},
              {"boundary_warning", res.boundary_warning},
              {"aborted", res.aborted},
              {"abort_reason", res.abort_reason}};
}

void cmd_equilibrium_check(ExperimentConfig& cfg, Output& out, std::ostream& log) {
  const Json& run = cfg.run();
  RunSummary& s = out.summary;
  const ModelSpec& model = cfg.model;
  const PhaseGrid grid = cfg.make_grid();
  const EquilibriumState eq = build_equilibrium(model, grid);
  const PartitionResult pr = partition_function(model);
  Json rep{{"Z", pr.Z}, {"log_Z", pr.log_Z}, {"partition_nodes", pr.nodes}, {"Z_grid", eq.Z}};

  std::optional<LaplaceReport> lap;
  try {
    lap = laplace_partition(model, &grid);
  } catch (const Error& e) {
    s.warnings.push_back(std::string("Laplace approximation unavailable: ") + e.what());
  }
  rep["Z_laplace"] = lap ? Json(lap->Z_laplace) : Json(nullptr);
  rep["ratio"] = lap ? Json(lap->ratio) : Json(nullptr);
  if (lap) {
    rep["q_star"] = lap->q_star;
    rep["K"] = lap->K;
  }
  if (!run.at("laplace_tolerance").is_null()) {
    const double tol = run.at("laplace_tolerance").get<double>();
    s.audits.push_back(at_most("Z / Z_laplace", lap ? std::abs(lap->ratio - 1.0) : NAN, tol,
                               "closed-form partition function"));
  }

  FokkerPlanck fp(model, grid);
  const ResidualNorms res = stationarity_residual(fp, eq);
  rep["max_stationarity_residual"] = res.max_abs;
  rep["l2_stationarity_residual"] = res.l2;
  if (run.at("refine").get<bool>()) {
    const StationarityStudy st = stationarity_refinement(model, cfg.nq, cfg.np, cfg.p_max, {}, false);
    rep["refinement"] = Json{{"coarse_max", st.coarse.max_abs},
                             {"fine_max", st.fine.max_abs},
                             {"ratio", st.ratio},
                             {"order", st.order_estimate}};
    const double need = run.at("order_min").get<double>();
    s.audits.push_back({"stationarity order", st.order_estimate >= need, st.order_estimate, need,
                        "residual of f* under grid doubling"});
    log << "klab: stationarity residual " << st.coarse.max_abs << " -> " << st.fine.max_abs << " (order "
        << st.order_estimate << ")\n";
  }

  double mean_err = 0.0, cov_err = 0.0;
  for (int i = 0; i < grid.nq(); ++i) {
    const ConditionalMoments cm = conditional_equilibrium_moments(eq, model, i);
    const double tm = model.temperature() * model.family->eval1(grid.q(i)).M;
    mean_err = std::max(mean_err, std::abs(cm.mean) / std::sqrt(tm));
    cov_err = std::max(cov_err, std::abs(cm.cov - tm) / tm);
  }
  rep["moment_errors"] = Json{{"conditional_mean", mean_err}, {"conditional_covariance", cov_err}};
  const double mtol = run.at("moment_tolerance").get<double>();
  s.audits.push_back(at_most("conditional momentum moments", std::max(mean_err, cov_err), mtol,
                             "E*(P|q) = 0 and E*(P^2|q) = T M(q)"));
  double gmass = 0.0;
  for (double v : eq.g) gmass += v;
  gmass *= grid.dq();
  rep["g_star_mass_error"] = std::abs(gmass - 1.0);
  s.audits.push_back(at_most("g* normalization", std::abs(gmass - 1.0), 1e-10));

  out.json("equilibrium.json", rep);
  out.field("f_star", "f_star", eq.density());
  if (lap) log << "klab: Z = " << pr.Z << ", Z_laplace = " << lap->Z_laplace << ", ratio " << lap->ratio << "\n";
}

void cmd_evolve(ExperimentConfig& cfg, Output& out, std::ostream& log, bool trace) {
  RunSummary& s = out.summary;
  const ModelSpec& model = cfg.model;
  const PhaseGrid grid = cfg.make_grid();
  const EquilibriumState eq = build_equilibrium(model, grid);
  FokkerPlanck fp(model, grid);
  const double dt = resolve_fpke_dt(cfg, fp, "dt");
  const Json& run = cfg.run();
  EvolutionRun er{make_initial_density(run.at("initial_condition"), eq, model), dt, run.at("t_end").get<double>(),
                  static_cast<int>(run.at("snapshot_every").get<long long>())};
  const bool dump = run.at("write_snapshots").get<bool>();

  auto diag = out.csv("diagnostics.csv", {"t", "mass", "min_f", "boundary_mass"});
  std::optional<CsvWriter> ecsv, bcsv;
  if (trace) {
    ecsv.emplace(out.csv("entropy.csv",
                         {"t", "F", "G", "H", "decomp_residual", "diss_rate", "pinsker_f", "pinsker_g", "pinsker_rho"}));
    bcsv.emplace(out.csv("entropy_bounds.csv",
                         {"t", "tv", "tv_bound", "g_l1", "g_bound", "rho_l1", "rho_bound", "G_dot", "floored"}));
  }
  std::vector<EntropyReport> reports;
  long index = 0;
  auto observer = [&](const DensityField& f, const StepDiagnostics& d) {
    diag.row({d.t, d.mass, d.min_f, d.boundary_mass});
    if (dump) out.field(snapshot_stem(index), "f", f);
    ++index;
    if (!trace) return;
    EntropyReport r = entropies(f, eq, model);
    r.t = f.t;
    *ecsv << r.t << r.F << r.G << r.H << r.split_residual << r.dissipation << (r.tv_bound - r.tv)
          << (r.g_bound - r.g_l1) << (r.rho_bound - r.rho_l1);
    ecsv->end_row();
    *bcsv << r.t << r.tv << r.tv_bound << r.g_l1 << r.g_bound << r.rho_l1 << r.rho_bound << r.G_dot
          << static_cast<long long>(r.floored);
    bcsv->end_row();
    reports.push_back(r);
  };
  log << "klab: evolving to t = " << er.t_end << " with dt " << dt << "\n";
  const EvolutionResult res = evolve(fp, er, observer, false);
  cfg.resolved["run"]["dt"] = res.dt;
  evolution_audits(res, s);
  out.field("final", "f", res.final_state);
  Json rep = evolution_json(res);

  if (trace) {
    double split = 0.0, lowest = INFINITY, diss = 0.0;
    long diss_points = 0;
    bool pinsker = true;
    for (const auto& r : reports) {
      split = std::max(split, std::abs(r.split_residual));
      lowest = std::min({lowest, r.F, r.G, r.H});
      pinsker = pinsker && r.pinsker_holds();
    }
    const double floor = run.at("dissipation_floor").get<double>();
    for (std::size_t k = 1; k + 1 < reports.size(); ++k) {
      const double fd = (reports[k + 1].F - reports[k - 1].F) / (reports[k + 1].t - reports[k - 1].t);
      if (std::abs(fd) <= floor) continue;
      ++diss_points;
      diss = std::max(diss, std::abs(fd - reports[k].dissipation) / std::abs(fd));
    }
    const double mtol = run.at("monotonicity_tolerance").get<double>();
    s.audits.push_back(at_most("entropy decomposition F = G + H", split, run.at("decomposition_tolerance").get<double>()));
    s.audits.push_back(at_most("entropy nonnegativity", -lowest, run.at("negativity_tolerance").get<double>()));
    s.audits.push_back({"Pinsker bounds", pinsker, pinsker ? 0.0 : 1.0, 0.0, "f, g and momentum marginal"});
    Json mono_json;
    if (reports.size() >= 20) {
      const MonotonicityReport mono = monotonicity_audit(reports, mtol);
      s.audits.push_back({"F nonincreasing", mono.monotone, mono.worst_increase, mtol,
                          mono.monotone ? "" : "first offending interval " + std::to_string(mono.offending_interval)});
      s.audits.push_back(at_most("waterbed G' + H' <= 0", mono.max_waterbed, mtol));
      Json flats = Json::array();
      for (const auto& [t, h] : mono.flat_segments) flats.push_back({t, h});
      mono_json = Json{{"monotone", mono.monotone},
                       {"worst_increase", mono.worst_increase},
                       {"offending_interval", mono.offending_interval},
                       {"max_waterbed", mono.max_waterbed},
                       {"simultaneous_rises", mono.simultaneous_rises},
                       {"flat_segments", flats}};
    } else {
      s.warnings.push_back("fewer than 20 snapshots; monotonicity audit skipped");
    }
    if (diss_points > 0)
      s.audits.push_back(at_most("dissipation rate vs finite differences", diss,
                                 run.at("dissipation_tolerance").get<double>(),
                                 std::to_string(diss_points) + " interior snapshots"));
    else
      s.warnings.push_back("no snapshot with |F'| above the dissipation floor");
    rep["entropy"] = Json{{"snapshots", reports.size()},
                          {"max_decomposition_residual", split},
                          {"min_entropy", lowest},
                          {"pinsker_holds", pinsker},
                          {"dissipation_relative_error", diss},
                          {"dissipation_points", diss_points},
                          {"monotonicity", mono_json},
                          {"F_initial", reports.empty() ? NAN : reports.front().F},
                          {"F_final", reports.empty() ? NAN : reports.back().F}};
  }
  out.json(trace ? "entropy.json" : "fpke.json", rep);
}

void moments_csv(Output& out, const std::vector<MomentRow>& rows) {
  auto csv = out.csv("moments.csv", {"t", "EH", "EH_se", "ET", "ET_se", "EV", "EV_se", "drift", "drift_se", "q_mean",
                                     "q_mean_se", "p_mean", "p_mean_se", "q_var", "q_var_se", "p_var", "p_var_se",
                                     "flagged"});
  for (const auto& r : rows) {
    csv << r.t << r.H.mean << r.H.se << r.T.mean << r.T.se << r.V.mean << r.V.se << r.drift.mean << r.drift.se
        << r.q_mean.mean << r.q_mean.se << r.p_mean.mean << r.p_mean.se << r.q_var.mean << r.q_var.se
        << r.p_var.mean << r.p_var.se << static_cast<long long>(r.flagged);
    csv.end_row();
  }
}

HistogramSpec histogram_for(const ExperimentConfig& cfg, int nq, int np) {
  HistogramSpec h;
  h.nq = nq;
  h.np = np;
  h.p_max = cfg.p_max;
  const Axis& ax = cfg.model.space.axes.front();
  if (ax.topology == Topology::line) {
    h.q_lo = ax.lo;
    h.q_hi = ax.hi;
  }
  return h;
}

void cmd_simulate_sde(ExperimentConfig& cfg, Output& out, std::ostream& log) {
  const Json& run = cfg.run();
  RunSummary& s = out.summary;
  SimulationConfig sc;
  sc.particles = static_cast<std::size_t>(run.at("particles").get<long long>());
  sc.dt = run.at("dt").get<double>();
  sc.t_end = run.at("t_end").get<double>();
  sc.seed = static_cast<std::uint64_t>(run.at("seed").get<long long>());
  sc.sample_every = static_cast<int>(run.at("sample_every").get<long long>());
  sc.threads = worker_threads();
  const Json& hist = run.at("histogram");
  if (hist.at("enabled").get<bool>())
    sc.histogram = histogram_for(cfg, static_cast<int>(hist.at("nq").get<long long>()),
                                 static_cast<int>(hist.at("np").get<long long>()));
  log << "klab: " << sc.particles << " particles, dt " << sc.dt << ", " << sc.threads << " thread(s)\n";
  const SimulationResult res =
      simulate_ensemble(cfg.model, make_initial_ensemble(run.at("initial"), cfg.model, sc.particles, sc.seed), sc);
  s.audits.push_back({"finite particles", !res.failed, static_cast<double>(res.final_ensemble.flagged_count()),
                      0.001 * static_cast<double>(sc.particles), res.failure});
  moments_csv(out, res.moments);
  if (res.histogram) out.field("histogram", "histogram", *res.histogram);
  if (run.at("dump_ensemble").get<bool>()) {
    const Ensemble& e = res.final_ensemble;
    MatrixFile m{"ensemble", e.count, static_cast<std::size_t>(2 * e.n), {}, {}};
    m.values.reserve(e.count * 2 * e.n);
    for (std::size_t i = 0; i < e.count; ++i) {
      for (int k = 0; k < e.n; ++k) m.values.push_back(e.q[i * e.n + k]);
      for (int k = 0; k < e.n; ++k) m.values.push_back(e.p[i * e.n + k]);
    }
    m.meta["columns"] = "q_1..q_n, p_1..p_n";
    m.meta["timestamp"] = e.t;
    out.matrix("ensemble", m);
  }
  out.json("sde.json", Json{{"dt", res.dt},
                            {"steps", res.steps},
                            {"particles", sc.particles},
                            {"flagged", res.final_ensemble.flagged_count()},
                            {"failed", res.failed},
                            {"failure", res.failure}});
}

void cmd_break_analysis(ExperimentConfig& cfg, Output& out, std::ostream& log) {
  const Json& run = cfg.run();
  RunSummary& s = out.summary;
  const PhaseGrid grid = cfg.make_grid();
  const EquilibriumState eq = build_equilibrium(cfg.model, grid);
  FokkerPlanck fp(cfg.model, grid);
  BreakOptions bo;
  bo.window = run.at("window").get<double>();
  bo.samples = static_cast<int>(run.at("samples").get<long long>());
  bo.substeps = static_cast<int>(run.at("substeps").get<long long>());
  const BreakAnalysis ba = break_analysis(fp, eq, break_spec_from(run), bo);
  cfg.resolved["run"]["window"] = ba.window;

  Json checks = Json::array();
  for (const auto& c : ba.checks) {
    checks.push_back(Json{{"name", c.name},
                          {"fitted", c.fitted},
                          {"predicted", c.predicted},
                          {"error", c.error},
                          {"tolerance", c.tolerance},
                          {"pass", c.pass}});
    s.audits.push_back({"break: " + c.name, c.pass, c.error, c.tolerance, {}});
  }
  out.json("break.json", Json{{"status", ba.status},
                              {"pass", ba.pass},
                              {"window", ba.window},
                              {"dt", ba.dt},
                              {"F0", ba.F0},
                              {"H0", ba.H0},
                              {"fitted", {{"F_dot", ba.F_dot},
                                          {"F_ddot", ba.F_ddot},
                                          {"F_dddot", ba.F_dddot},
                                          {"G_dot", ba.G_dot},
                                          {"G_ddot", ba.G_ddot},
                                          {"H_dot", ba.H_dot},
                                          {"H_ddot", ba.H_ddot}}},
                              {"predicted", {{"F_dddot", ba.F_dddot_pred},
                                             {"H_ddot", ba.H_ddot_pred},
                                             {"G_ddot", ba.G_ddot_formula}}},
                              {"r2", {{"F", ba.r2_F}, {"G", ba.r2_G}, {"H", ba.r2_H}}},
                              {"cubic_residual", ba.cubic_residual},
                              {"dt_eta_error", ba.dt_eta_error},
                              {"checks", checks}});
  auto csv = out.csv("break_trace.csv", {"t", "F", "G", "H"});
  for (std::size_t k = 0; k < ba.t.size(); ++k) csv.row({ba.t[k], ba.F[k], ba.G[k], ba.H[k]});
  out.summary.message = ba.status;
  log << "klab: " << ba.status << "\n";
}

void cmd_spectrum(ExperimentConfig& cfg, Output& out, std::ostream& log) {
  const Json& run = cfg.run();
  RunSummary& s = out.summary;
  const PhaseGrid grid = cfg.make_grid();
  const EquilibriumState eq = build_equilibrium(cfg.model, grid);
  const LinearizedOperator ops =
      assemble_linearized_operators(cfg.model, eq, static_cast<int>(run.at("stencil_order").get<long long>()));
  const AdjointnessReport ad = adjointness_audit(ops, static_cast<int>(run.at("probes").get<long long>()),
                                                 static_cast<std::uint64_t>(run.at("seed").get<long long>()));
  SpectrumOptions so;
  so.pairs = static_cast<int>(run.at("pairs").get<long long>());
  so.high_frequency_limit = run.at("high_frequency_limit").get<double>();
  log << "klab: dense eigendecompositions of " << ops.Lambda_gs.rows() << "- and " << ops.Ldag.rows()
      << "-dimensional operators\n";
  const SpectrumReport sp = spectrum(ops, so);

  const auto modes = static_cast<std::size_t>(run.at("pairing_modes").get<long long>());
  double worst = sp.pairs.size() >= modes ? 0.0 : INFINITY;
  for (std::size_t k = 0; k < std::min(modes, sp.pairs.size()); ++k) worst = std::max(worst, sp.pairs[k].distance);
  const double ptol = run.at("positive_tolerance").get<double>();
  int positive = 0;
  for (auto z : sp.lambda_eigs)
    if (z.real() > ptol * sp.spectral_radius) ++positive;

  s.audits.push_back(at_most("adjoint defect of Phi vs -Xi^dagger", ad.independent_defect,
                             run.at("adjoint_tolerance").get<double>()));
  s.audits.push_back(at_most("<Phi Xi psi, psi> <= 0", ad.max_form, 0.0, std::to_string(ad.probes) + " probes"));
  s.audits.push_back(at_most("projector commutation", ad.projector_defect, 1e-10));
  s.audits.push_back(at_most("pairing of slowest modes", worst, run.at("pairing_tolerance").get<double>(),
                             std::to_string(modes) + " modes"));
  s.audits.push_back(at_most("quadratic relation residual", sp.max_quad_residual, run.at("quad_tolerance").get<double>()));
  s.audits.push_back({"no growing modes", positive == 0, static_cast<double>(positive), 0.0, {}});
  s.audits.push_back(at_most("zero-Psi spectrum vs singular values", sp.zero_psi_defect,
                             run.at("zero_psi_tolerance").get<double>()));

  Json lam = Json::array(), ldag = Json::array(), pairs = Json::array();
  for (auto z : sp.lambda_eigs) lam.push_back(pair_json(z));
  for (auto z : sp.ldag_eigs) ldag.push_back(pair_json(z));
  for (std::size_t k = 0; k < sp.pairs.size(); ++k) {
    const auto& p = sp.pairs[k];
    pairs.push_back(Json{{"id", k},
                         {"lambda", pair_json(p.lambda)},
                         {"partner", pair_json(p.partner)},
                         {"distance", p.distance},
                         {"high_frequency", p.high_frequency},
                         {"quad_residual", k < sp.quad_residuals.size() ? sp.quad_residuals[k] : NAN}});
  }
  out.json("spectrum.json", Json{{"lambda_eigenvalues", lam},
                                 {"ldag_eigenvalues", ldag},
                                 {"pairs", pairs},
                                 {"worst_pairing", worst},
                                 {"spectral_radius", sp.spectral_radius},
                                 {"max_real_relative", sp.max_real_relative},
                                 {"positive_count", positive},
                                 {"max_quad_residual", sp.max_quad_residual},
                                 {"zero_psi_defect", sp.zero_psi_defect},
                                 {"audit", {{"independent_defect", ad.independent_defect},
                                            {"enforced_defect", ad.enforced_defect},
                                            {"max_form", ad.max_form},
                                            {"max_form_identity", ad.max_form_identity},
                                            {"symmetry_defect", ad.symmetry_defect},
                                            {"projector_defect", ad.projector_defect},
                                            {"raw_constraint_leak", ad.raw_constraint_leak},
                                            {"probes", ad.probes}}}});
  auto csv = out.csv("spectrum.csv", {"re", "im", "source", "pair_id"});
  auto pair_of = [&](std::complex<double> z, bool lambda) -> long long {
    for (std::size_t k = 0; k < sp.pairs.size(); ++k)
      if ((lambda ? sp.pairs[k].lambda : sp.pairs[k].partner) == z) return static_cast<long long>(k);
    return -1;
  };
  for (auto z : sp.lambda_eigs) {
    csv << z.real() << z.imag() << std::string_view("lambda") << pair_of(z, true);
    csv.end_row();
  }
  for (auto z : sp.ldag_eigs) {
    csv << z.real() << z.imag() << std::string_view("ldag") << pair_of(z, false);
    csv.end_row();
  }
}

void cmd_cross_validate(ExperimentConfig& cfg, Output& out, std::ostream& log) {
  const Json& run = cfg.run();
  RunSummary& s = out.summary;
  const ModelSpec& model = cfg.model;
  const PhaseGrid grid = cfg.make_grid();
  const EquilibriumState eq = build_equilibrium(model, grid);
  FokkerPlanck fp(model, grid);
  const Json& init = run.at("initial");
  const int fq = static_cast<int>(run.at("coarsen").at(0).get<double>());
  const int fpc = static_cast<int>(run.at("coarsen").at(1).get<double>());
  if (grid.nq() % fq != 0 || grid.np() % fpc != 0)
    throw Error(ErrorKind::schema, "run.coarsen: factors must divide the grid sizes");

  DensityField f0 = init.at("type") == "equilibrium"
                        ? eq.density()
                        : gaussian_density(grid, init.at("q").at(0).get<double>(), init.at("p").at(0).get<double>(),
                                           std::pow(init.at("sd_q").get<double>(), 2),
                                           std::pow(init.at("sd_p").get<double>(), 2));
  const double t_end = run.at("t_end").get<double>();
  const double fdt = resolve_fpke_dt(cfg, fp, "fpke_dt");
  log << "klab: FPKE to t = " << t_end << "\n";
  const EvolutionResult fr = evolve(fp, EvolutionRun{f0, fdt, t_end, 1 << 30}, {}, false);
  cfg.resolved["run"]["fpke_dt"] = fr.dt;
  evolution_audits(fr, s);

  SimulationConfig sc;
  sc.particles = static_cast<std::size_t>(run.at("particles").get<long long>());
  sc.dt = run.at("dt").get<double>();
  sc.t_end = t_end;
  sc.seed = static_cast<std::uint64_t>(run.at("seed").get<long long>());
  sc.sample_every = static_cast<int>(run.at("sample_every").get<long long>());
  sc.threads = worker_threads();
  sc.histogram = matching_histogram(grid, fq, fpc);
  log << "klab: SDE with " << sc.particles << " particles\n";
  const SimulationResult sr = simulate_ensemble(model, make_initial_ensemble(init, model, sc.particles, sc.seed), sc);
  s.audits.push_back({"finite particles", !sr.failed, static_cast<double>(sr.final_ensemble.flagged_count()),
                      0.001 * static_cast<double>(sc.particles), sr.failure});

  const DensityField coarse = coarsen_density(fr.final_state, fq, fpc);
  const double l1 = l1_distance(coarse, *sr.histogram);
  s.audits.push_back(at_most("histogram vs FPKE L1", l1, run.at("l1_tolerance").get<double>()));

  const double z = run.at("se_threshold").get<double>();
  const MomentRow& last = sr.moments.back();
  const PhaseMoments fm = phase_moments(fr.final_state);
  Json moments{{"fpke", {{"p_mean", fm.mean_p}, {"p_var", fm.var_p}}},
               {"sde", {{"p_mean", last.p_mean.mean},
                        {"p_mean_se", last.p_mean.se},
                        {"p_var", last.p_var.mean},
                        {"p_var_se", last.p_var.se},
                        {"ET", last.T.mean},
                        {"ET_se", last.T.se}}}};
  s.audits.push_back(at_most("p mean SDE vs FPKE (SE units)", std::abs(last.p_mean.mean - fm.mean_p) / last.p_mean.se, z));
  s.audits.push_back(at_most("p variance SDE vs FPKE (SE units)", std::abs(last.p_var.mean - fm.var_p) / last.p_var.se, z));
  if (run.at("stationary").get<bool>()) {
    double em = 0.0;
    for (int i = 0; i < grid.nq(); ++i) em += eq.g[i] * model.family->eval1(grid.q(i)).M;
    em *= grid.dq();
    const double p2 = model.temperature() * em;
    moments["equilibrium"] = Json{{"E_P2", p2}, {"E_T", 0.5 * model.temperature()}};
    const double second = last.p_var.mean + last.p_mean.mean * last.p_mean.mean;
    s.audits.push_back(at_most("stationary E P^2 vs T E*M (SE units)", std::abs(second - p2) / last.p_var.se, z));
    s.audits.push_back(at_most("stationary E T vs T/2 (SE units)",
                               std::abs(last.T.mean - 0.5 * model.temperature()) / last.T.se, z));
  }
  out.json("crossval.json", Json{{"l1", l1},
                                 {"fpke", evolution_json(fr)},
                                 {"sde", {{"dt", sr.dt}, {"steps", sr.steps}, {"particles", sc.particles},
                                          {"flagged", sr.final_ensemble.flagged_count()}}},
                                 {"moments", moments}});
  moments_csv(out, sr.moments);
  out.field("fpke_final", "f", fr.final_state);
  out.field("fpke_coarse", "f_coarse", coarse);
  out.field("histogram", "histogram", *sr.histogram);
  log << "klab: L1 = " << l1 << "\n";
}

Json audits_json(const RunSummary& s) {
  Json a = Json::array();
  for (const auto& x : s.audits)
    a.push_back(Json{{"name", x.name}, {"pass", x.pass}, {"value", x.value}, {"threshold", x.threshold},
                     {"detail", x.detail}});
  return a;
}

void write_manifest(const fs::path& dir, Subcommand cmd, const std::string& hash, double wall,
                    const std::string& status, int exit_code, const RunSummary& s, const std::string& error) {
  Json m{{"artifact_version", artifact_version},
         {"subcommand", to_string(cmd)},
         {"config_hash", hash},
         {"wall_time_s", wall},
         {"status", status},
         {"exit_code", exit_code},
         {"audits", audits_json(s)},
         {"warnings", s.warnings},
         {"artifacts", s.artifacts},
         {"message", s.message}};
  if (!error.empty()) m["error"] = error;
  write_json(dir / "manifest.json", m);
}

}  // namespace

DensityField make_initial_density(const Json& spec, const EquilibriumState& eq, const ModelSpec& model) {
  const std::string type = spec.at("type").get<std::string>();
  const PhaseGrid& grid = eq.grid;
  if (type == "equilibrium") return eq.density();
  if (type == "gaussian") {
    const double sq = spec.at("sd_q").get<double>(), sp = spec.at("sd_p").get<double>();
    return gaussian_density(grid, spec.at("q").get<double>(), spec.at("p").get<double>(), sq * sq, sp * sp,
                            spec.value("corr", 0.0) * sq * sp);
  }
  if (type == "break") return build_break_initial_condition(break_spec_from(spec), eq, model);
  if (type == "conditional_gaussian") {
    const auto g0 = tilted_position_density(eq, spec.at("tilt").get<double>());
    const double a = spec.at("mean_amplitude").get<double>();
    const bool circle = grid.periodic_q();
    return conditional_gaussian_state(
        eq, model, g0, [a, circle](double q) { return a * (circle ? std::sin(q) : std::tanh(q)); },
        spec.at("variance_scale").get<double>());
  }
  if (type == "perturbed") return perturbed_equilibrium(eq, model, spec.at("amplitude").get<double>());
  if (type == "mixture") {
    const double w = spec.at("weight").get<double>();
    DensityField c = make_initial_density(spec.at("component"), eq, model);
    for (std::size_t k = 0; k < c.values.size(); ++k) c.values[k] = (1.0 - w) * eq.f[k] + w * c.values[k];
    normalize(c);
    return c;
  }
  throw Error(ErrorKind::schema, "initial_condition.type: unknown type '" + type + "'");
}

Ensemble make_initial_ensemble(const Json& spec, const ModelSpec& model, std::size_t count, std::uint64_t seed) {
  const std::string type = spec.at("type").get<std::string>();
  if (type == "equilibrium") return equilibrium_ensemble(model, count, seed);
  const int n = model.dim();
  PhasePoint x{Vec(n), Vec(n)};
  for (int k = 0; k < n; ++k) {
    x.q(k) = spec.at("q").at(k).get<double>();
    x.p(k) = spec.at("p").at(k).get<double>();
  }
  if (type == "point") return point_ensemble(model, x, count, seed);
  if (type == "gaussian")
    return gaussian_ensemble(model, x, spec.at("sd_q").get<double>(), spec.at("sd_p").get<double>(), count, seed);
  throw Error(ErrorKind::schema, "initial.type: unknown type '" + type + "'");
}

RunSummary execute(ExperimentConfig& cfg, std::ostream& log) {
  RunSummary summary;
  std::error_code ec;
  fs::create_directories(cfg.output.directory, ec);
  if (ec) throw Error(ErrorKind::io, "cannot create " + cfg.output.directory.string() + ": " + ec.message());
  Output out{cfg, summary};
  switch (cfg.command) {
    case Subcommand::equilibrium_check: cmd_equilibrium_check(cfg, out, log); break;
    case Subcommand::evolve_fpke: cmd_evolve(cfg, out, log, false); break;
    case Subcommand::entropy_trace: cmd_evolve(cfg, out, log, true); break;
    case Subcommand::simulate_sde: cmd_simulate_sde(cfg, out, log); break;
    case Subcommand::break_analysis: cmd_break_analysis(cfg, out, log); break;
    case Subcommand::spectrum: cmd_spectrum(cfg, out, log); break;
    case Subcommand::cross_validate: cmd_cross_validate(cfg, out, log); break;
  }
  return summary;
}

int run_subcommand(Subcommand cmd, const Json& doc, std::ostream& log) {
  const auto start = std::chrono::steady_clock::now();
  auto wall = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };
  RunSummary summary;
  std::optional<ExperimentConfig> cfg;
  try {
    cfg = parse_config(cmd, doc);
  } catch (const Error& e) {
    log << "klab: " << e.what() << "\n";
    try {
      write_manifest(output_directory_hint(doc), cmd, "", wall(), "schema_error", 2, summary, e.what());
    } catch (const Error& io) {
      log << "klab: " << io.what() << "\n";
    }
    return 2;
  }

  int code = 0;
  std::string status = "pass", error;
  try {
    summary = execute(*cfg, log);
    if (!summary.passed()) {
      code = 1;
      status = "fail";
      for (const auto& a : summary.audits)
        if (!a.pass) {
          log << "klab: audit failed: " << a.name << " (value " << a.value << ", threshold " << a.threshold << ")";
          if (!a.detail.empty()) log << ": " << a.detail;
          log << "\n";
        }
    }
  } catch (const Error& e) {
    code = e.kind() == ErrorKind::schema ? 2 : 1;
    status = e.kind() == ErrorKind::schema ? "schema_error" : "error";
    error = e.what();
    log << "klab: " << e.what() << "\n";
  } catch (const std::exception& e) {
    code = 1;
    status = "error";
    error = e.what();
    log << "klab: " << e.what() << "\n";
  }
  for (const auto& w : summary.warnings) log << "klab: warning: " << w << "\n";
  try {
    write_json(cfg->output.directory / "resolved_config.json", cfg->resolved);
    write_manifest(cfg->output.directory, cmd, config_hash(cfg->resolved), wall(), status, code, summary, error);
  } catch (const Error& e) {
    log << "klab: " << e.what() << "\n";
    return 1;
  }
  for (const auto& a : summary.audits) log << "klab: " << (a.pass ? "PASS " : "FAIL ") << a.name << "\n";
  return code;
}

int run_subcommand(Subcommand cmd, const fs::path& config_path, std::ostream& log) {
  std::ifstream in(config_path);
  if (!in) {
    log << "klab: schema: " << config_path.string() << ": cannot open config file\n";
    try {
      write_manifest(output_directory_hint(Json()), cmd, "", 0.0, "schema_error", 2, {}, "cannot open config file");
    } catch (const Error&) {
    }
    return 2;
  }
  Json doc;
  try {
    doc = Json::parse(in, nullptr, true, true);
  } catch (const Json::parse_error& e) {
    log << "klab: schema: " << config_path.string() << ": " << e.what() << "\n";
    try {
      write_manifest(output_directory_hint(Json()), cmd, "", 0.0, "schema_error", 2, {}, e.what());
    } catch (const Error&) {
    }
    return 2;
  }
  return run_subcommand(cmd, doc, log);
}

}  // namespace klab
