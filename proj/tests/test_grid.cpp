#include "klab/error.hpp"
#include "klab/grid.hpp"
#include "klab/initial.hpp"

#include <doctest.h>

#include <cmath>

using namespace klab;

namespace {

ModelSpec pendulum() {
  auto space = PositionSpace::circle(1);
  return make_model(pendulum_family(1, 1.0, 1.0, 1.0), space, 1.0, sample_nodes(space, 64));
}

DensityField smooth_density(const PhaseGrid& g) {
  DensityField f{g, std::vector<double>(g.size()), 0.0};
  for (int i = 0; i < g.nq(); ++i)
    for (int j = 0; j < g.np(); ++j) {
      const double q = g.q(i), p = g.p(j);
      f(i, j) = (1.0 + 0.4 * std::cos(q)) * std::exp(-0.5 * (p - 0.3 * std::sin(q)) * (p - 0.3 * std::sin(q)));
    }
  normalize(f);
  return f;
}

}  // namespace

TEST_CASE("grid geometry") {
  const PhaseGrid g = PhaseGrid::for_model(pendulum(), 64, 48);
  CHECK(g.periodic_q());
  CHECK(g.q(0) == 0.0);
  CHECK(g.dq() == doctest::Approx(two_pi / 64));
  CHECK(g.p(0) == doctest::Approx(-g.p_axis().hi + 0.5 * g.dp()));
  CHECK(g.symmetric_p());
  CHECK(g.p_axis().hi == doctest::Approx(7.0));
  CHECK(g.index(2, 3) == 2u * 48u + 3u);
}

TEST_CASE("line grids are cell centred") {
  auto space = PositionSpace::line(1, -4.0, 4.0);
  const ModelSpec m = make_model(harmonic_family(1, 1.0, 1.0, 1.0), space, 1.0, sample_nodes(space, 16));
  const PhaseGrid g = PhaseGrid::for_model(m, 32, 32);
  CHECK(g.q(0) == doctest::Approx(-4.0 + 0.125));
  CHECK(g.q(31) == doctest::Approx(4.0 - 0.125));
}

TEST_CASE("too-small grids are rejected") {
  CHECK_THROWS_AS(PhaseGrid::for_model(pendulum(), 8, 64), Error);
  CHECK_THROWS_AS(PhaseGrid(GridAxis{32, 0, 1, Boundary::periodic}, GridAxis{32, -1, 1, Boundary::periodic}), Error);
}

TEST_CASE("marginal, conditional and conditional mean") {
  const PhaseGrid g = PhaseGrid::for_model(pendulum(), 64, 96);
  const DensityField f = smooth_density(g);
  CHECK(total_mass(f) == doctest::Approx(1.0).epsilon(1e-14));
  const MarginalField m = marginalize_position(f);
  CHECK(integrate_q(g, m.values) == doctest::Approx(1.0).epsilon(1e-13));
  const ConditionalField h = conditional_pdf(f, m);
  for (double n : h.normalization) CHECK(n == doctest::Approx(1.0).epsilon(1e-13));
  const ConditionalMeanField cm = conditional_mean(g, h);
  for (int i = 0; i < g.nq(); i += 7) CHECK(cm.gamma[i] == doctest::Approx(0.3 * std::sin(g.q(i))).epsilon(1e-8));
}

TEST_CASE("parity split is idempotent and reconstructs") {
  const PhaseGrid g = PhaseGrid::for_model(pendulum(), 32, 64);
  const DensityField f = smooth_density(g);
  const ParitySplit s = parity_split(g, f.values);
  for (std::size_t k = 0; k < g.size(); ++k) CHECK(s.plus[k] + s.minus[k] == doctest::Approx(f.values[k]));
  const ParitySplit again = parity_split(g, s.plus);
  for (std::size_t k = 0; k < g.size(); ++k) {
    CHECK(again.plus[k] == doctest::Approx(s.plus[k]).epsilon(1e-15));
    CHECK(std::abs(again.minus[k]) < 1e-15);
  }
}

TEST_CASE("conditional density refuses empty positions") {
  const PhaseGrid g = PhaseGrid::for_model(pendulum(), 32, 32);
  DensityField f = smooth_density(g);
  for (int j = 0; j < g.np(); ++j) f(5, j) = 0.0;
  try {
    conditional_pdf(f, marginalize_position(f));
    FAIL("empty column accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::positivity);
  }
  DensityField zero{g, std::vector<double>(g.size(), 0.0), 0.0};
  CHECK_THROWS_AS(normalize(zero), Error);
}

TEST_CASE("central derivatives are second order") {
  double err[2];
  for (int level = 0; level < 2; ++level) {
    const int n = 32 << level;
    const PhaseGrid g = PhaseGrid::for_model(pendulum(), n, n);
    std::vector<double> u(g.size());
    for (int i = 0; i < g.nq(); ++i)
      for (int j = 0; j < g.np(); ++j) u[g.index(i, j)] = std::sin(g.q(i)) * std::exp(-0.1 * g.p(j) * g.p(j));
    const auto dq = spatial_derivative(g, u, Direction::q, 1);
    double e = 0;
    for (int i = 0; i < g.nq(); ++i)
      for (int j = 0; j < g.np(); ++j)
        e = std::max(e, std::abs(dq[g.index(i, j)] - std::cos(g.q(i)) * std::exp(-0.1 * g.p(j) * g.p(j))));
    err[level] = e;
  }
  CHECK(err[0] / err[1] == doctest::Approx(4.0).epsilon(0.1));
  const PhaseGrid g = PhaseGrid::for_model(pendulum(), 32, 32);
  CHECK_THROWS_AS(spatial_derivative(g, std::vector<double>(g.size()), Direction::p, 3), Error);
  CHECK_THROWS_AS(spatial_derivative(g, std::vector<double>(5), Direction::p, 1), Error);
}

TEST_CASE("momentum marginals and boundary mass") {
  const PhaseGrid g = PhaseGrid::for_model(pendulum(), 32, 64);
  const DensityField f = smooth_density(g);
  const MarginalField m = marginalize_position(f);
  const ConditionalField h = conditional_pdf(f, m);
  const MomentumMarginals mm = momentum_marginals(f, m, h.values);
  for (int j = 0; j < g.np(); ++j) CHECK(mm.rho[j] == doctest::Approx(mm.rho_hat[j]).epsilon(1e-12));
  CHECK(boundary_mass(f) < 1e-8);
}

TEST_CASE("phase moments of a Gaussian") {
  auto space = PositionSpace::line(1, -8.0, 8.0);
  const ModelSpec m = make_model(harmonic_family(1, 1.0, 1.0, 1.0), space, 1.0, sample_nodes(space, 16));
  const PhaseGrid g = PhaseGrid::for_model(m, 128, 128);
  const DensityField f = gaussian_density(g, 0.5, -0.2, 0.8, 1.1, 0.3);
  const PhaseMoments pm = phase_moments(f);
  CHECK(pm.mean_q == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(pm.mean_p == doctest::Approx(-0.2).epsilon(1e-9));
  CHECK(pm.var_q == doctest::Approx(0.8).epsilon(1e-6));
  CHECK(pm.var_p == doctest::Approx(1.1).epsilon(1e-6));
  CHECK(pm.cov_qp == doctest::Approx(0.3).epsilon(1e-6));
  CHECK_THROWS_AS(gaussian_density(g, 0, 0, 1.0, 1.0, 2.0), Error);
}
