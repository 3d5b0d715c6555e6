#include "klab/entropy.hpp"
#include "klab/error.hpp"
#include "klab/initial.hpp"

#include <doctest.h>

#include <cmath>

using namespace klab;

namespace {

ModelSpec pendulum(double beta = 1.0) {
  auto space = PositionSpace::circle(1);
  return make_model(pendulum_family(1, 1.0, 1.0, 1.0), space, beta, sample_nodes(space, 64));
}

ModelSpec harmonic() {
  const auto fam = harmonic_family(1, 1.0, 1.0, 1.0);
  const auto [lo, hi] = default_line_bounds(*fam, 1.0);
  auto space = PositionSpace::line(1, lo, hi);
  return make_model(fam, space, 1.0, sample_nodes(space, 64));
}

}  // namespace

TEST_CASE("entropy splits exactly and is zero at equilibrium") {
  const ModelSpec m = pendulum();
  const PhaseGrid g = PhaseGrid::for_model(m, 64, 96);
  const EquilibriumState eq = build_equilibrium(m, g);
  const EntropyReport r0 = entropies(eq.density(), eq, m);
  CHECK(std::abs(r0.F) < 1e-12);
  CHECK(std::abs(r0.G) < 1e-12);
  CHECK(std::abs(r0.H) < 1e-12);
  CHECK(std::abs(r0.dissipation) < 1e-12);

  const auto g0 = tilted_position_density(eq, 0.4);
  const DensityField f = conditional_gaussian_state(eq, m, g0, [](double q) { return 0.6 * std::sin(q); }, 1.4);
  const LogRatioFields lr = log_ratio_fields(f, eq, true);
  CHECK(lr.split_error < 1e-12);
  CHECK(lr.floored == 0);
  const EntropyReport r = entropies(f, eq, m, lr);
  CHECK(std::abs(r.split_residual) < 1e-12);
  CHECK(r.F > r.G);
  CHECK(r.G > 0.0);
  CHECK(r.H > 0.0);
  CHECK(r.dissipation < 0.0);
  CHECK(r.pinsker_holds());
  CHECK(r.dissipation == doctest::Approx(dissipation_rate(f, eq, m)));
}

TEST_CASE("Pinsker report without conditionals") {
  const ModelSpec m = pendulum();
  const PhaseGrid g = PhaseGrid::for_model(m, 64, 96);
  const EquilibriumState eq = build_equilibrium(m, g);
  const auto g0 = tilted_position_density(eq, 0.4);
  const DensityField f = conditional_gaussian_state(eq, m, g0, [](double q) { return 0.6 * std::sin(q); }, 1.4);
  const EntropyReport a = entropies(f, eq, m), b = pinsker_report(f, eq);
  CHECK(b.F == doctest::Approx(a.F).epsilon(1e-12));
  CHECK(b.G == doctest::Approx(a.G).epsilon(1e-12));
  CHECK(b.H == doctest::Approx(a.H).epsilon(1e-10));
  CHECK(b.rho_l1 == doctest::Approx(a.rho_l1).epsilon(1e-12));
  // A narrow Gaussian leaves the position marginal below the floor in places.
  const DensityField narrow = gaussian_density(g, 3.0, 0.0, 0.01, 0.5);
  CHECK_THROWS_AS(entropies(narrow, eq, m), Error);
  const EntropyReport n = pinsker_report(narrow, eq);
  CHECK(n.pinsker_holds());
  CHECK(n.F > n.G);
}

TEST_CASE("entropy of a shifted Gaussian matches the closed form") {
  const ModelSpec m = harmonic();
  const PhaseGrid g = PhaseGrid::for_model(m, 128, 128);
  const EquilibriumState eq = build_equilibrium(m, g);
  const double mu = 0.5;
  const DensityField f = gaussian_density(g, mu, 0.0, 1.0, 1.0);
  const EntropyReport r = entropies(f, eq, m);
  CHECK(r.F == doctest::Approx(0.5 * mu * mu).epsilon(1e-8));
  CHECK(r.G == doctest::Approx(0.5 * mu * mu).epsilon(1e-8));
  CHECK(std::abs(r.H) < 1e-10);
  // A momentum shift puts the entropy in the conditional part.
  const EntropyReport rp = entropies(gaussian_density(g, 0.0, mu, 1.0, 1.0), eq, m);
  CHECK(rp.H == doctest::Approx(0.5 * mu * mu).epsilon(1e-8));
  CHECK(std::abs(rp.G) < 1e-10);
  CHECK(rp.dissipation == doctest::Approx(-0.5 * mu * mu).epsilon(1e-6));
}

TEST_CASE("strict log ratios reject densities with empty regions") {
  const ModelSpec m = pendulum();
  const PhaseGrid g = PhaseGrid::for_model(m, 32, 32);
  const EquilibriumState eq = build_equilibrium(m, g);
  DensityField f = eq.density();
  for (int i = 0; i < g.nq(); ++i)
    for (int j = 0; j < g.np() / 4; ++j) f(i, j) = 0.0;
  normalize(f);
  CHECK_THROWS_AS(log_ratio_fields(f, eq, true), Error);
  const LogRatioFields lr = log_ratio_fields(f, eq, false);
  CHECK(lr.floored > 0);
}

TEST_CASE("monotonicity audit") {
  std::vector<EntropyReport> rs(10);
  CHECK_THROWS_AS(monotonicity_audit(rs), Error);
  rs.resize(30);
  for (std::size_t k = 0; k < rs.size(); ++k) {
    rs[k].t = 0.1 * static_cast<double>(k);
    rs[k].F = std::exp(-rs[k].t);
    rs[k].G = 0.6 * rs[k].F;
    rs[k].H = 0.4 * rs[k].F;
  }
  MonotonicityReport ok = monotonicity_audit(rs);
  CHECK(ok.monotone);
  CHECK(ok.max_waterbed < 0.0);
  CHECK(ok.simultaneous_rises == 0);
  rs[12].F = rs[11].F + 1e-6;
  MonotonicityReport bad = monotonicity_audit(rs);
  CHECK(!bad.monotone);
  CHECK(bad.offending_interval == 11);
}

TEST_CASE("break analysis") {
  const ModelSpec m = pendulum();
  const PhaseGrid g = PhaseGrid::for_model(m, 128, 192);
  const FokkerPlanck fp(m, g);
  const EquilibriumState eq = build_equilibrium(m, g);
  SUBCASE("a tilted start satisfies the identities") {
    const BreakAnalysis ba = break_analysis(fp, eq, {BreakSpec::Kind::tilt, 0.2, 1});
    CHECK(ba.pass);
    CHECK(ba.status == "break identities hold");
    CHECK(std::abs(ba.H0) < 1e-12);
    CHECK(ba.F_dddot < 0.0);
  }
  SUBCASE("equilibrium start") {
    const BreakAnalysis ba = break_analysis(fp, eq, {BreakSpec::Kind::tilt, 0.0, 1});
    CHECK(ba.pass);
    CHECK(ba.status == "equilibrium reached, tau = 0");
  }
  SUBCASE("amplitude beyond the positivity margin") {
    CHECK_THROWS_AS(break_analysis(fp, eq, {BreakSpec::Kind::tilt, 0.8, 1}), Error);
  }
  SUBCASE("a window far too wide fails the fit") {
    BreakOptions opt;
    opt.window = 5.0;
    CHECK_THROWS_AS(break_analysis(fp, eq, {BreakSpec::Kind::tilt, 0.2, 1}, opt), Error);
  }
}
