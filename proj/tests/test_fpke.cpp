#include "klab/equilibrium.hpp"
#include "klab/error.hpp"
#include "klab/fpke.hpp"
#include "klab/initial.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace klab;

namespace {

ModelSpec pendulum(double beta = 1.0) {
  auto space = PositionSpace::circle(1);
  return make_model(pendulum_family(1, 1.0, 1.0, 1.0), space, beta, sample_nodes(space, 64));
}

ModelSpec variable_mass(double beta = 1.0) {
  auto space = PositionSpace::circle(1);
  return make_model(variable_mass_pendulum_family(1.0, 1.0, 0.4, 0.8, 0.5), space, beta, sample_nodes(space, 64));
}

ModelSpec harmonic(double beta = 1.0) {
  const auto fam = harmonic_family(1, 1.0, 1.0, 1.0);
  const auto [lo, hi] = default_line_bounds(*fam, beta);
  auto space = PositionSpace::line(1, lo, hi);
  return make_model(fam, space, beta, sample_nodes(space, 64));
}

double dot(const PhaseGrid& g, std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s * g.cell();
}

}  // namespace

TEST_CASE("generator and adjoint are dual for densities inside the window") {
  for (const ModelSpec& m : {pendulum(), variable_mass()}) {
    const PhaseGrid g = PhaseGrid::for_model(m, 48, 64);
    const FokkerPlanck fp(m, g);
    const DensityField f = gaussian_density(g, 2.0, 0.3, 0.6, 0.8, 0.1);
    std::vector<double> phi(g.size());
    for (int i = 0; i < g.nq(); ++i)
      for (int j = 0; j < g.np(); ++j) phi[g.index(i, j)] = std::sin(g.q(i)) * g.p(j) + std::cos(2 * g.q(i));
    const double lhs = dot(g, fp.apply_generator(phi), f.values);
    const double rhs = dot(g, phi, fp.apply_adjoint(f.values));
    CHECK(std::abs(lhs - rhs) <= 1e-8 * std::max(1.0, std::abs(lhs)));
  }
}

TEST_CASE("generator on H and on p for the harmonic model") {
  const ModelSpec m = harmonic();
  const PhaseGrid g = PhaseGrid::for_model(m, 64, 64);
  const FokkerPlanck fp(m, g);
  std::vector<double> H(g.size()), P(g.size());
  for (int i = 0; i < g.nq(); ++i)
    for (int j = 0; j < g.np(); ++j) {
      H[g.index(i, j)] = 0.5 * g.q(i) * g.q(i) + 0.5 * g.p(j) * g.p(j);
      P[g.index(i, j)] = g.p(j);
    }
  const auto LH = fp.apply_generator(H);
  const auto LP = fp.apply_generator(P);
  const double F = 0.5 * m.beta;
  // Interior nodes avoid the one-sided boundary stencils.
  for (int i = 2; i < g.nq() - 2; i += 3)
    for (int j = 2; j < g.np() - 2; j += 3) {
      const double p = g.p(j), q = g.q(i);
      CHECK(LH[g.index(i, j)] == doctest::Approx(0.5 - F * p * p).epsilon(1e-10).scale(1.0));
      CHECK(LP[g.index(i, j)] == doctest::Approx(-q - F * p).epsilon(1e-10).scale(1.0));
    }
}

TEST_CASE("conservative and expanded adjoint forms agree to discretization error") {
  const ModelSpec m = variable_mass();
  double prev = 0.0;
  for (int n : {32, 64}) {
    const PhaseGrid g = PhaseGrid::for_model(m, n, 2 * n);
    const FokkerPlanck fp(m, g);
    const DensityField f = gaussian_density(g, 3.0, 0.0, 0.5, 0.7);
    const auto a = fp.apply_adjoint(f.values);
    const auto b = fp.apply_adjoint_expanded(f.values);
    double err = 0.0, scale = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      err = std::max(err, std::abs(a[k] - b[k]));
      scale = std::max(scale, std::abs(a[k]));
    }
    if (prev > 0.0) CHECK(prev / err > 3.0);
    prev = err;
    CHECK(err < 0.1 * scale);
  }
}

TEST_CASE("f* is stationary to second order") {
  SUBCASE("harmonic") {
    const StationarityStudy s = stationarity_refinement(harmonic(), 64, 64);
    CHECK(s.ratio >= 3.4);
    CHECK(s.ratio <= 4.6);
  }
  SUBCASE("variable mass") {
    const StationarityStudy s = stationarity_refinement(variable_mass(2.0), 64, 64);
    CHECK(s.order_estimate > 1.5);
  }
  SUBCASE("scaled diffusion breaks stationarity") {
    FpkeOptions opt;
    opt.damping_scale = 1.5;
    CHECK_THROWS_AS(stationarity_refinement(pendulum(), 32, 32, 0.0, opt), Error);
    const StationarityStudy s = stationarity_refinement(pendulum(), 32, 32, 0.0, opt, false);
    CHECK(s.ratio < 1.5);
  }
}

TEST_CASE("RK4 evolution conserves mass and relaxes toward f*") {
  const ModelSpec m = pendulum();
  const PhaseGrid g = PhaseGrid::for_model(m, 48, 64);
  const FokkerPlanck fp(m, g);
  const EquilibriumState eq = build_equilibrium(m, g);
  EvolutionRun run;
  run.initial = gaussian_density(g, 2.0, 0.5, 0.4, 0.5);
  run.t_end = 3.0;
  run.snapshot_every = 50;
  int seen = 0;
  const EvolutionResult r = evolve(fp, run, [&](const DensityField&, const StepDiagnostics&) { ++seen; });
  CHECK(!r.aborted);
  CHECK(r.max_step_mass_drift < 1e-12);
  CHECK(r.total_mass_drift < 1e-11);
  CHECK(r.dt == doctest::Approx(fp.stable_dt()));
  CHECK(seen == static_cast<int>(r.snapshots.size()));
  CHECK(r.snapshots.front().t == 0.0);
  CHECK(r.final_state.t == doctest::Approx(3.0));
  auto dist = [&](const DensityField& f) {
    double s = 0.0;
    for (std::size_t k = 0; k < f.values.size(); ++k) s += std::abs(f.values[k] - eq.f[k]);
    return s * g.cell();
  };
  CHECK(dist(r.final_state) < dist(run.initial));
}

TEST_CASE("f* stays put under evolution") {
  const ModelSpec m = pendulum();
  const PhaseGrid g = PhaseGrid::for_model(m, 64, 96);
  const FokkerPlanck fp(m, g);
  const EquilibriumState eq = build_equilibrium(m, g);
  EvolutionRun run;
  run.initial = eq.density();
  run.t_end = 1.0;
  run.snapshot_every = 1000000;
  const EvolutionResult r = evolve(fp, run, {}, false);
  const double drift = stationarity_residual(fp, eq).max_abs;
  double worst = 0.0;
  for (std::size_t k = 0; k < eq.f.size(); ++k) worst = std::max(worst, std::abs(r.final_state.values[k] - eq.f[k]));
  CHECK(worst <= 1.01 * drift * run.t_end);
}

TEST_CASE("evolution error paths") {
  const ModelSpec m = pendulum();
  const PhaseGrid g = PhaseGrid::for_model(m, 32, 32);
  EvolutionRun run;
  run.initial = gaussian_density(g, 3.0, 0.0, 0.5, 0.5);
  run.t_end = 0.1;
  SUBCASE("step above the stability bound") {
    const FokkerPlanck fp(m, g);
    run.dt = 10.0 * fp.stable_dt();
    try {
      evolve(fp, run);
      FAIL("unstable step accepted");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::stability);
    }
  }
  SUBCASE("non-Einstein damping") {
    FpkeOptions opt;
    opt.damping_scale = 2.0;
    const FokkerPlanck fp(m, g, opt);
    CHECK_THROWS_AS(evolve(fp, run), Error);
  }
  SUBCASE("grid mismatch") {
    const FokkerPlanck fp(m, PhaseGrid::for_model(m, 32, 48));
    CHECK_THROWS_AS(evolve(fp, run), Error);
  }
}

TEST_CASE("position and conditional PDE residuals converge under refinement") {
  const ModelSpec m = variable_mass();
  std::vector<double> pos, cond;
  for (int n : {64, 128}) {
    const PhaseGrid g = PhaseGrid::for_model(m, n, 3 * n / 2);
    const FokkerPlanck fp(m, g);
    const EquilibriumState eq = build_equilibrium(m, g);
    const auto g0 = tilted_position_density(eq, 0.3);
    const DensityField f = conditional_gaussian_state(eq, m, g0, [](double q) { return 0.5 * std::sin(q); }, 1.3);
    DensityField after = f;
    const double dt = 1e-4;
    rk4_step(fp, after.values, dt);
    after.t = dt;
    const PositionResidual pr = position_pde_residual(fp, f, after, dt);
    const ConditionalResidual cr = conditional_pde_residual(fp, f, after, dt);
    CHECK(cr.parity_agreement < 1e-10);
    double hs = 0.0;
    for (double v : cr.rhs) hs = std::max(hs, std::abs(v));
    // The conservative q flux sums exactly to the marginal flux, so only the
    // time discretization is left.
    double gs = 0.0;
    for (double v : g0) gs = std::max(gs, v);
    pos.push_back(pr.norms.max_abs / gs);
    cond.push_back(cr.norms.l2 / hs);
  }
  CHECK(pos[0] < 1e-8);
  CHECK(pos[1] < 1e-8);
  CHECK(cond[0] / cond[1] > 3.0);
}
