#include "klab/equilibrium.hpp"
#include "klab/error.hpp"
#include "klab/sde.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>

using namespace klab;

namespace {

ModelSpec pendulum(double beta = 1.0) {
  auto space = PositionSpace::circle(1);
  return make_model(pendulum_family(1, 1.0, 1.0, 1.0), space, beta, sample_nodes(space, 64));
}

ModelSpec variable_mass() {
  auto space = PositionSpace::circle(1);
  return make_model(variable_mass_pendulum_family(1.0, 1.0, 0.4, 0.8, 0.5), space, 1.0, sample_nodes(space, 64));
}

PhasePoint point(double q, double p) { return {Vec::Constant(1, q), Vec::Constant(1, p)}; }

}  // namespace

TEST_CASE("trajectories are reproducible and thread-count independent") {
  const ModelSpec m = variable_mass();
  Ensemble a = gaussian_ensemble(m, point(1.0, 0.0), 0.3, 0.5, 5000, 11);
  Ensemble b = a, c = a;
  for (int k = 0; k < 25; ++k) {
    em_step(m, a, 1e-2, 1);
    em_step(m, b, 1e-2, 1);
    em_step(m, c, 1e-2, 3);
  }
  CHECK(a.q == b.q);
  CHECK(a.p == b.p);
  CHECK(a.q == c.q);
  CHECK(a.p == c.p);
  CHECK(a.step == 25);
  CHECK(a.t == doctest::Approx(0.25));

  Ensemble d = gaussian_ensemble(m, point(1.0, 0.0), 0.3, 0.5, 5000, 12);
  em_step(m, d, 1e-2);
  CHECK(d.p != b.p);
}

TEST_CASE("the cached Box-Muller variate matches a fresh draw") {
  const ModelSpec m = pendulum();
  Ensemble a = point_ensemble(m, point(0.5, 0.1), 64, 3);
  em_step(m, a, 1e-2);
  Ensemble b = a;
  b.spare.clear();
  b.spare_step = ~std::uint64_t{0};
  em_step(m, a, 1e-2);
  em_step(m, b, 1e-2);
  CHECK(a.q == b.q);
  CHECK(a.p == b.p);
}

TEST_CASE("stream of particle i does not depend on the ensemble size") {
  const ModelSpec m = pendulum();
  Ensemble small = point_ensemble(m, point(0.5, 0.0), 10, 5);
  Ensemble large = point_ensemble(m, point(0.5, 0.0), 100, 5);
  for (int k = 0; k < 7; ++k) {
    em_step(m, small, 1e-2);
    em_step(m, large, 1e-2);
  }
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(small.q[i] == large.q[i]);
    CHECK(small.p[i] == large.p[i]);
  }
}

TEST_CASE("equilibrium sampling reproduces f* moments") {
  const ModelSpec m = variable_mass();
  const Ensemble e = equilibrium_ensemble(m, 40000, 9);
  const PhaseGrid g = PhaseGrid::for_model(m, 256, 64);
  const EquilibriumState eq = build_equilibrium(m, g);
  double ecos = 0.0, em = 0.0;
  for (int i = 0; i < g.nq(); ++i) {
    ecos += eq.g[static_cast<std::size_t>(i)] * std::cos(g.q(i));
    em += eq.g[static_cast<std::size_t>(i)] * m.family->eval1(g.q(i)).M;
  }
  ecos *= g.dq();
  em *= g.dq();
  std::vector<double> cs(e.count), pp(e.count), pm(e.count);
  for (std::size_t i = 0; i < e.count; ++i) {
    cs[i] = std::cos(e.q[i]);
    pp[i] = e.p[i] * e.p[i];
    pm[i] = e.p[i];
  }
  const MeanSe mc = batch_mean(cs), mpp = batch_mean(pp), mp = batch_mean(pm);
  CHECK(std::abs(mc.mean - ecos) < 4 * mc.se);
  CHECK(std::abs(mpp.mean - m.temperature() * em) < 4 * mpp.se);
  CHECK(std::abs(mp.mean) < 4 * mp.se);
}

TEST_CASE("batch means") {
  std::vector<double> x(1000);
  std::iota(x.begin(), x.end(), 0.0);
  const MeanSe r = batch_mean(x);
  CHECK(r.mean == doctest::Approx(499.5));
  CHECK(r.se > 0.0);
  std::vector<unsigned char> ex(1000, 0);
  ex[999] = 1;
  CHECK(batch_mean(x, ex).mean == doctest::Approx(499.0));
  const std::vector<double> flat(500, 2.0);
  CHECK(batch_mean(flat).se == 0.0);
}

TEST_CASE("histogram bins line up with coarsened grid cells") {
  const ModelSpec m = pendulum();
  const PhaseGrid fine = PhaseGrid::for_model(m, 128, 128);
  const Ensemble e = gaussian_ensemble(m, point(0.2, 0.0), 1.0, 1.0, 5000, 21);
  for (int f : {1, 2, 4, 8}) {
    const DensityField hf = histogram_density(m, e, matching_histogram(fine, 1, 1));
    CHECK(hf.grid == fine);
    const DensityField coarse = coarsen_density(hf, f, f);
    const DensityField direct = histogram_density(m, e, matching_histogram(fine, f, f));
    REQUIRE(coarse.grid.nq() == direct.grid.nq());
    CHECK(l1_distance(coarse, direct) < 1e-12);
    CHECK(coarse.grid.q(0) == doctest::Approx(direct.grid.q(0)));
  }
  CHECK_THROWS_AS(coarsen_density(histogram_density(m, e, matching_histogram(fine, 1, 1)), 3, 1), Error);
}

TEST_CASE("simulation records moments at sample times") {
  const ModelSpec m = pendulum();
  SimulationConfig cfg;
  cfg.particles = 500;
  cfg.dt = 1e-2;
  cfg.t_end = 0.5;
  cfg.sample_every = 10;
  const SimulationResult r = simulate_ensemble(m, point_ensemble(m, point(1.0, 0.0), 500, 1), cfg);
  CHECK(!r.failed);
  REQUIRE(r.moments.size() == 6);
  CHECK(r.moments.front().t == 0.0);
  CHECK(r.moments.back().t == doctest::Approx(0.5));
  CHECK(r.moments.front().q_var.mean == 0.0);
  for (const MomentRow& row : r.moments)
    CHECK(row.H.mean == doctest::Approx(row.T.mean + row.V.mean).epsilon(1e-12));
  SimulationConfig bad = cfg;
  bad.dt = 0.0;
  CHECK_THROWS_AS(simulate_ensemble(m, point_ensemble(m, point(1.0, 0.0), 10, 1), bad), Error);
}

TEST_CASE("energy audit") {
  const ModelSpec m = pendulum();
  EnergyAuditConfig cfg;
  cfg.dt = 1e-3;
  cfg.steps = 50;
  CHECK_THROWS_AS(energy_balance_audit(m, point_ensemble(m, point(0.5, 0.0), 100, 1), cfg), Error);
  cfg.steps = 120;
  cfg.sample_every = 1;
  const EnergyAudit a = energy_balance_audit(m, equilibrium_ensemble(m, 4000, 2), cfg);
  CHECK(a.intervals.size() == 120);
  CHECK(a.max_energy_split_error < 1e-12);
  CHECK(std::abs(a.whole.z_H) < 4.0);
}
