#include "klab/entropy.hpp"

#include "klab/error.hpp"
#include "klab/polyfit.hpp"

#include <algorithm>
#include <cmath>

namespace klab {

namespace {

constexpr double kMaskFloor = 1e-300;

std::vector<double> mass_on_q(const PhaseGrid& grid, const ModelSpec& model) {
  std::vector<double> m(static_cast<std::size_t>(grid.nq()));
  for (int i = 0; i < grid.nq(); ++i) m[i] = model.family->eval1(grid.q(i)).M;
  return m;
}

std::vector<double> diffusion_on_q(const PhaseGrid& grid, const ModelSpec& model) {
  std::vector<double> d(static_cast<std::size_t>(grid.nq()));
  for (int i = 0; i < grid.nq(); ++i) d[i] = model.family->eval1(grid.q(i)).D;
  return d;
}

void require_same_grid(const DensityField& f, const EquilibriumState& eq) {
  if (!(f.grid == eq.grid)) throw Error(ErrorKind::grid, "density and equilibrium live on different grids");
}

}  // namespace

LogRatioFields log_ratio_fields(const DensityField& f, const EquilibriumState& eq, bool strict) {
  require_same_grid(f, eq);
  const PhaseGrid& grid = f.grid;
  LogRatioFields r;
  r.g = marginalize_position(f);
  r.h = conditional_pdf(f, r.g);
  const int nq = grid.nq(), np = grid.np();
  r.xi.resize(nq);
  for (int i = 0; i < nq; ++i) r.xi[i] = std::log(r.g.values[i]) - eq.log_g[i];
  r.theta.assign(grid.size(), 0.0);
  r.eta.assign(grid.size(), 0.0);
  r.masked.assign(grid.size(), 0);
  for (int i = 0; i < nq; ++i) {
    const double lg = std::log(r.g.values[i]);
    for (int j = 0; j < np; ++j) {
      const std::size_t k = grid.index(i, j);
      const double v = f.values[k];
      if (!(v > kMaskFloor)) {
        r.masked[k] = 1;
        ++r.floored;
        continue;
      }
      const double lf = std::log(v);
      r.theta[k] = lf - eq.log_f[k];
      r.eta[k] = lf - lg - eq.log_h[k];
      r.split_error = std::max(r.split_error, std::abs(r.theta[k] - r.xi[i] - r.eta[k]));
    }
  }
  if (strict && static_cast<double>(r.floored) > 1e-3 * static_cast<double>(grid.size()))
    throw Error(ErrorKind::positivity,
                std::to_string(r.floored) + " of " + std::to_string(grid.size()) + " nodes below the density floor");
  return r;
}

double dissipation_rate(const DensityField& f, const ModelSpec& model, const LogRatioFields& lr) {
  const PhaseGrid& grid = f.grid;
  const auto dpeta = spatial_derivative(grid, lr.eta, Direction::p, 1);
  const auto d = diffusion_on_q(grid, model);
  double s = 0.0;
  for (int i = 0; i < grid.nq(); ++i)
    for (int j = 0; j < grid.np(); ++j) {
      const std::size_t k = grid.index(i, j);
      if (lr.masked[k]) continue;
      s += f.values[k] * d[i] * dpeta[k] * dpeta[k];
    }
  return -0.5 * s * grid.cell();
}

double dissipation_rate(const DensityField& f, const EquilibriumState& eq, const ModelSpec& model) {
  return dissipation_rate(f, model, log_ratio_fields(f, eq));
}

EntropyReport entropies(const DensityField& f, const EquilibriumState& eq, const ModelSpec& model) {
  return entropies(f, eq, model, log_ratio_fields(f, eq));
}

EntropyReport entropies(const DensityField& f, const EquilibriumState& eq, const ModelSpec& model,
                        const LogRatioFields& lr) {
  require_same_grid(f, eq);
  const PhaseGrid& grid = f.grid;
  EntropyReport r;
  r.t = f.t;
  r.floored = lr.floored;
  double F = 0.0, H = 0.0, tv = 0.0;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    tv += std::abs(f.values[k] - eq.f[k]);
    if (lr.masked[k]) continue;
    F += f.values[k] * lr.theta[k];
    H += f.values[k] * lr.eta[k];
  }
  double G = 0.0, gl1 = 0.0;
  for (int i = 0; i < grid.nq(); ++i) {
    G += lr.g.values[i] * lr.xi[i];
    gl1 += std::abs(lr.g.values[i] - eq.g[i]);
  }
  r.F = F * grid.cell();
  r.H = H * grid.cell();
  r.G = G * grid.dq();
  r.split_residual = r.F - r.G - r.H;
  if (r.F < -1e-10 || r.G < -1e-10 || r.H < -1e-10)
    throw Error(ErrorKind::quadrature_defect, "negative entropy: F=" + std::to_string(r.F) +
                                                  " G=" + std::to_string(r.G) + " H=" + std::to_string(r.H));
  r.tv = 0.5 * tv * grid.cell();
  r.tv_bound = std::sqrt(std::max(r.F, 0.0) / 2.0);
  r.g_l1 = gl1 * grid.dq();
  r.g_bound = std::sqrt(2.0 * std::max(r.G, 0.0));
  const MomentumMarginals mm = momentum_marginals(f, lr.g, eq.h);
  double rl1 = 0.0;
  for (int j = 0; j < grid.np(); ++j) rl1 += std::abs(mm.rho[j] - mm.rho_hat[j]);
  r.rho_l1 = rl1 * grid.dp();
  r.rho_bound = std::sqrt(2.0 * std::max(r.H, 0.0));
  r.dissipation = dissipation_rate(f, model, lr);

  const ConditionalMeanField cm = conditional_mean(grid, lr.h);
  const auto dxi = derivative_q(grid, lr.xi, 1);
  const auto m = mass_on_q(grid, model);
  double gd = 0.0;
  for (int i = 0; i < grid.nq(); ++i) gd += lr.g.values[i] * cm.gamma[i] / m[i] * dxi[i];
  r.G_dot = gd * grid.dq();
  return r;
}

EntropyReport pinsker_report(const DensityField& f, const EquilibriumState& eq) {
  require_same_grid(f, eq);
  const PhaseGrid& grid = f.grid;
  EntropyReport r;
  r.t = f.t;
  double F = 0.0, tv = 0.0;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double v = f.values[k];
    tv += std::abs(v - eq.f[k]);
    if (v > kMaskFloor) F += v * (std::log(v) - eq.log_f[k]);
    else ++r.floored;
  }
  const MarginalField g = marginalize_position(f);
  double G = 0.0, gl1 = 0.0;
  for (int i = 0; i < grid.nq(); ++i) {
    const double v = g.values[i];
    if (v > kMaskFloor) G += v * (std::log(v) - eq.log_g[i]);
    gl1 += std::abs(v - eq.g[i]);
  }
  r.F = F * grid.cell();
  r.G = G * grid.dq();
  r.H = r.F - r.G;
  r.tv = 0.5 * tv * grid.cell();
  r.tv_bound = std::sqrt(std::max(r.F, 0.0) / 2.0);
  r.g_l1 = gl1 * grid.dq();
  r.g_bound = std::sqrt(2.0 * std::max(r.G, 0.0));
  const MomentumMarginals mm = momentum_marginals(f, g, eq.h);
  double rl1 = 0.0;
  for (int j = 0; j < grid.np(); ++j) rl1 += std::abs(mm.rho[j] - mm.rho_hat[j]);
  r.rho_l1 = rl1 * grid.dp();
  r.rho_bound = std::sqrt(2.0 * std::max(r.H, 0.0));
  return r;
}

std::vector<double> measured_dt_eta(const FokkerPlanck& fp, const DensityField& f) {
  const PhaseGrid& grid = fp.grid();
  const auto L = fp.apply_adjoint(f.values);
  std::vector<double> out(grid.size(), 0.0);
  for (int i = 0; i < grid.nq(); ++i) {
    double g = 0.0, gdot = 0.0;
    for (int j = 0; j < grid.np(); ++j) {
      g += f.values[grid.index(i, j)];
      gdot += L[grid.index(i, j)];
    }
    const double rate = gdot / g;  // dp cancels
    for (int j = 0; j < grid.np(); ++j) {
      const std::size_t k = grid.index(i, j);
      if (f.values[k] > kMaskFloor) out[k] = L[k] / f.values[k] - rate;
    }
  }
  return out;
}

PositionEntropyDerivatives position_entropy_derivatives(const FokkerPlanck& fp, const DensityField& f,
                                                        const EquilibriumState& eq,
                                                        std::optional<std::span<const double>> dt_eta) {
  const PhaseGrid& grid = f.grid;
  const LogRatioFields lr = log_ratio_fields(f, eq);
  const ConditionalMeanField cm = conditional_mean(grid, lr.h);
  const auto dxi = derivative_q(grid, lr.xi, 1);
  const auto m = mass_on_q(grid, fp.model());
  PositionEntropyDerivatives r;

  std::vector<double> own;
  std::span<const double> eta_t;
  if (dt_eta) {
    eta_t = *dt_eta;
  } else {
    const ConditionalRhs rhs = conditional_rhs(fp, f);
    own.resize(grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k) own[k] = rhs.h[k] > 0.0 ? rhs.direct[k] / rhs.h[k] : 0.0;
    eta_t = own;
  }
  if (eta_t.size() != grid.size()) throw Error(ErrorKind::grid, "d_t eta field has the wrong size");

  double gd = 0.0, transport = 0.0;
  for (int i = 0; i < grid.nq(); ++i) {
    gd += lr.g.values[i] * cm.gamma[i] / m[i] * dxi[i];
    for (int j = 0; j < grid.np(); ++j) {
      const std::size_t k = grid.index(i, j);
      if (lr.masked[k]) {
        ++r.excluded;
        continue;
      }
      transport += f.values[k] * dxi[i] * grid.p(j) / m[i] * eta_t[k];
    }
  }
  std::vector<double> u(grid.nq());
  for (int i = 0; i < grid.nq(); ++i) u[i] = eq.g[i] * cm.gamma[i] / m[i];
  auto w = derivative_q(grid, u, 1);
  for (int i = 0; i < grid.nq(); ++i) w[i] /= eq.g[i];
  const auto dw = derivative_q(grid, w, 1);
  double mean = 0.0;
  for (int i = 0; i < grid.nq(); ++i) mean += lr.g.values[i] * cm.gamma[i] / m[i] * dw[i];
  r.G_dot = gd * grid.dq();
  r.transport_term = transport * grid.cell();
  r.mean_term = -mean * grid.dq();
  r.G_ddot = r.transport_term + r.mean_term;
  return r;
}

std::vector<double> break_position_density(const BreakSpec& spec, const EquilibriumState& eq,
                                           const ModelSpec& model) {
  const PhaseGrid& grid = eq.grid;
  const int nq = grid.nq();
  std::vector<double> lg(nq);
  if (spec.kind == BreakSpec::Kind::tilt) {
    if (std::abs(spec.amplitude) > 0.5)
      throw Error(ErrorKind::positivity, "tilt amplitude must satisfy |a| max|s| <= 0.5");
    for (int i = 0; i < nq; ++i) {
      const double q = grid.q(i);
      const double s = grid.periodic_q() ? std::cos(spec.harmonic * q) : std::tanh(q);
      lg[i] = eq.log_g[i] + std::log1p(spec.amplitude * s);
    }
  } else {
    for (int i = 0; i < nq; ++i) {
      const Coeffs1 c = model.family->eval1(grid.q(i) - spec.amplitude);
      lg[i] = -model.beta * c.V + 0.5 * std::log(c.M);
    }
  }
  const double top = *std::max_element(lg.begin(), lg.end());
  double s = 0.0;
  for (double v : lg) s += std::exp(v - top);
  const double lz = top + std::log(s * grid.dq());
  std::vector<double> g0(nq);
  for (int i = 0; i < nq; ++i) g0[i] = std::exp(lg[i] - lz);
  return g0;
}

DensityField build_break_initial_condition(std::span<const double> g0, const EquilibriumState& eq) {
  const PhaseGrid& grid = eq.grid;
  if (g0.size() != static_cast<std::size_t>(grid.nq())) throw Error(ErrorKind::grid, "g0 has the wrong size");
  for (double v : g0)
    if (!(v > 0.0) || !std::isfinite(v)) throw Error(ErrorKind::positivity, "g0 must be positive and finite");
  DensityField f{grid, std::vector<double>(grid.size()), 0.0};
  for (int i = 0; i < grid.nq(); ++i)
    for (int j = 0; j < grid.np(); ++j) f(i, j) = g0[i] * eq.h[grid.index(i, j)];
  return f;
}

DensityField build_break_initial_condition(const BreakSpec& spec, const EquilibriumState& eq,
                                           const ModelSpec& model) {
  return build_break_initial_condition(break_position_density(spec, eq, model), eq);
}

namespace {

struct Fit {
  std::vector<double> c;  // coefficients in t / w
  double r2 = 1.0;
  double rms = 0.0;
  bool flat = false;      // data without variation
};

Fit fit(std::span<const double> t, std::span<const double> y, int degree, double w) {
  Fit r;
  r.c = polyfit(t, y, degree, 0.0, w);
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(y.size());
  double ss_tot = 0.0, ss_res = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) {
    const double s = t[k] / w;
    double p = 0.0, x = 1.0;
    for (double c : r.c) {
      p += c * x;
      x *= s;
    }
    ss_res += (y[k] - p) * (y[k] - p);
    ss_tot += (y[k] - mean) * (y[k] - mean);
  }
  r.rms = std::sqrt(ss_res / static_cast<double>(y.size()));
  const double scale = std::max(1e-300, std::abs(mean));
  r.flat = ss_tot <= 1e-30 * scale * scale * static_cast<double>(y.size()) || ss_tot == 0.0;
  r.r2 = r.flat ? 1.0 : 1.0 - ss_res / ss_tot;
  return r;
}

FitCheck relative_check(std::string name, double fitted, double predicted, double tol) {
  FitCheck c{std::move(name), fitted, predicted, 0.0, tol, false};
  c.error = std::abs(fitted - predicted) / std::abs(predicted);
  c.pass = c.error <= tol;
  return c;
}

}  // namespace

BreakAnalysis break_analysis(const FokkerPlanck& fp, const EquilibriumState& eq, const BreakSpec& spec,
                             const BreakOptions& options) {
  const ModelSpec& model = fp.model();
  const PhaseGrid& grid = fp.grid();
  if (!(grid == eq.grid)) throw Error(ErrorKind::grid, "operator and equilibrium grids differ");
  if (options.samples < 5) throw Error(ErrorKind::numerical, "break analysis needs at least 5 samples");
  BreakAnalysis ba;
  ba.spec = spec;
  DensityField f = build_break_initial_condition(spec, eq, model);
  const LogRatioFields lr0 = log_ratio_fields(f, eq, true);
  const auto dxi = derivative_q(grid, lr0.xi, 1);
  const auto m = mass_on_q(grid, model);
  const auto d = diffusion_on_q(grid, model);
  const double temp = model.temperature();
  double fp3 = 0.0, hp2 = 0.0;
  for (int i = 0; i < grid.nq(); ++i) {
    const double g0 = lr0.g.values[i];
    fp3 += g0 * dxi[i] * dxi[i] * d[i] / (m[i] * m[i]);
    hp2 += g0 * dxi[i] * dxi[i] / m[i];
  }
  ba.F_dddot_pred = -fp3 * grid.dq();
  ba.H_ddot_pred = temp * hp2 * grid.dq();
  const EntropyReport e0 = entropies(f, eq, model, lr0);
  ba.F0 = e0.F;
  ba.H0 = e0.H;

  // Window: the cubic term dominates the quartic one for w well below the
  // relaxation time; also keep |F'''| w^3 / 6 under 0.1 F(0).
  double w = options.window;
  if (!(w > 0.0)) {
    w = 0.02;
    if (std::abs(ba.F_dddot_pred) > 0.0 && ba.F0 > 0.0)
      w = std::min(w, std::cbrt(0.6 * ba.F0 / std::abs(ba.F_dddot_pred)));
  }
  ba.window = w;
  const int intervals = options.samples - 1;
  const double interval = w / intervals;
  const int sub = options.substeps > 0 ? options.substeps
                                       : std::max(1, static_cast<int>(std::ceil(interval / fp.stable_dt())));
  ba.dt = interval / sub;
  if (ba.dt > fp.stable_dt() * (1.0 + 1e-12)) throw Error(ErrorKind::stability, "break-analysis step above stability bound");

  // Closed-form break d_t eta = -p M^-1 d_q xi.
  std::vector<double> eta_pred(grid.size());
  for (int i = 0; i < grid.nq(); ++i)
    for (int j = 0; j < grid.np(); ++j) eta_pred[grid.index(i, j)] = -grid.p(j) / m[i] * dxi[i];
  const auto eta_meas = measured_dt_eta(fp, f);
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    num += eq.f[k] * (eta_meas[k] - eta_pred[k]) * (eta_meas[k] - eta_pred[k]);
    den += eq.f[k] * eta_pred[k] * eta_pred[k];
  }
  ba.dt_eta_error = den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
  ba.G_ddot_formula = position_entropy_derivatives(fp, f, eq, std::span<const double>(eta_pred)).G_ddot;

  std::vector<double> values = f.values;
  for (int s = 0; s <= intervals; ++s) {
    if (s > 0)
      for (int k = 0; k < sub; ++k) rk4_step(fp, values, ba.dt);
    DensityField snap{grid, values, s * interval};
    const EntropyReport r = entropies(snap, eq, model);
    ba.t.push_back(snap.t);
    ba.F.push_back(r.F);
    ba.G.push_back(r.G);
    ba.H.push_back(r.H);
  }

  const Fit fF = fit(ba.t, ba.F, 3, w), fG = fit(ba.t, ba.G, 2, w), fH = fit(ba.t, ba.H, 2, w);
  ba.r2_F = fF.r2;
  ba.r2_G = fG.r2;
  ba.r2_H = fH.r2;
  ba.F_dot = polyfit_derivative(fF.c, 1, w);
  ba.F_ddot = polyfit_derivative(fF.c, 2, w);
  ba.F_dddot = polyfit_derivative(fF.c, 3, w);
  ba.G_dot = polyfit_derivative(fG.c, 1, w);
  ba.G_ddot = polyfit_derivative(fG.c, 2, w);
  ba.H_dot = polyfit_derivative(fH.c, 1, w);
  ba.H_ddot = polyfit_derivative(fH.c, 2, w);

  const bool equilibrium = !(std::abs(ba.F_dddot_pred) > 1e-14);
  if (equilibrium) {
    // On the grid f* drifts at the rate of its stationarity residual r, so
    // F(t) may grow to (t^2 / 2) sum r^2 / f* but no further.
    double fmax = 0.0;
    for (double v : ba.F) fmax = std::max(fmax, std::abs(v));
    const auto r = fp.apply_adjoint(eq.f);
    double drift = 0.0;
    for (std::size_t k = 0; k < r.size(); ++k) drift += r[k] * r[k] / eq.f[k];
    drift *= 0.5 * w * w * grid.cell();
    const double allowed = 1.1 * drift + 1e-12;
    ba.checks.push_back({"F(0) (abs)", ba.F0, 0.0, std::abs(ba.F0), 1e-12, std::abs(ba.F0) < 1e-12});
    ba.checks.push_back({"F stays at the grid drift level (abs)", fmax, drift, fmax, allowed, fmax <= allowed});
    ba.pass = ba.checks[0].pass && ba.checks[1].pass;
    ba.status = ba.pass ? "equilibrium reached, tau = 0" : "equilibrium start but F moved";
    return ba;
  }

  const double min_r2 = std::min({fF.r2, fG.r2, fH.r2});
  if (min_r2 < 0.999)
    throw Error(ErrorKind::window_too_wide,
                "fit R^2 = " + std::to_string(min_r2) + " below 0.999; try window " + std::to_string(0.5 * w));
  ba.cubic_residual = fF.rms / (std::abs(ba.F_dddot_pred) * w * w * w / 6.0);

  const double fd_tol = 1e-3 * std::abs(ba.F_dddot_pred) * w * w;
  ba.checks.push_back({"H(0) (abs)", ba.H0, 0.0, std::abs(ba.H0), 1e-12, std::abs(ba.H0) < 1e-12});
  ba.checks.push_back({"F'(0) (abs, scaled by |F'''| w^2)", ba.F_dot, 0.0, std::abs(ba.F_dot), fd_tol,
                       std::abs(ba.F_dot) < fd_tol});
  ba.checks.push_back(relative_check("F'''(0)", ba.F_dddot, ba.F_dddot_pred, 0.05));
  ba.checks.push_back(relative_check("H''(0)", ba.H_ddot, ba.H_ddot_pred, 0.05));
  {
    const double e = std::abs(ba.G_ddot + ba.H_ddot) / std::abs(ba.H_ddot);
    ba.checks.push_back({"G''(0) + H''(0)", ba.G_ddot, -ba.H_ddot, e, 0.05, e < 0.05});
  }
  ba.checks.push_back(relative_check("G'' formula vs -T E|d_q xi|^2", ba.G_ddot_formula, -ba.H_ddot_pred, 1e-6));
  ba.checks.push_back({"d_t eta field", ba.dt_eta_error, 0.0, ba.dt_eta_error, 0.02, ba.dt_eta_error <= 0.02});
  ba.checks.push_back({"cubic residual", ba.cubic_residual, 0.0, ba.cubic_residual, 0.01, ba.cubic_residual <= 0.01});
  ba.checks.push_back({"F''' < 0", ba.F_dddot, 0.0, ba.F_dddot, 0.0, ba.F_dddot < 0.0});
  ba.pass = std::all_of(ba.checks.begin(), ba.checks.end(), [](const FitCheck& c) { return c.pass; });
  ba.status = ba.pass ? "break identities hold" : "break identities violated";
  return ba;
}

MonotonicityReport monotonicity_audit(std::span<const EntropyReport> reports, double tolerance) {
  if (reports.size() < 20) throw Error(ErrorKind::resolution, "monotonicity audit needs at least 20 snapshots");
  MonotonicityReport r;
  for (std::size_t k = 0; k + 1 < reports.size(); ++k) {
    const EntropyReport &a = reports[k], &b = reports[k + 1];
    const double dF = b.F - a.F;
    if (dF > r.worst_increase) r.worst_increase = dF;
    if (dF > tolerance && r.monotone) {
      r.monotone = false;
      r.offending_interval = static_cast<long>(k);
    }
    if (std::abs(dF) < 1e-8) r.flat_segments.emplace_back(a.t, a.H);
    const double dt = b.t - a.t;
    const double dG = b.G - a.G, dH = b.H - a.H;
    if (dt > 0.0) r.max_waterbed = std::max(r.max_waterbed, (dG + dH) / dt);
    if (dG > 1e-12 && dH > 1e-12) ++r.simultaneous_rises;
  }
  return r;
}

}  // namespace klab
