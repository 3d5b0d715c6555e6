#include "klab/error.hpp"
#include "klab/model.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace klab;

namespace {

ModelSpec pendulum(double beta = 1.0) {
  auto space = PositionSpace::circle(1);
  return make_model(pendulum_family(1, 1.0, 1.0, 1.0), space, beta, sample_nodes(space, 64));
}

ModelSpec variable_mass() {
  auto space = PositionSpace::circle(1);
  return make_model(variable_mass_pendulum_family(1.0, 1.0, 0.4, 0.8, 0.3), space, 2.0, sample_nodes(space, 64));
}

}  // namespace

TEST_CASE("hamiltonian gradient matches finite differences at random points") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> uq(0.0, two_pi), up(-3.0, 3.0);
  for (const ModelSpec& m : {pendulum(), variable_mass()}) {
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      PhasePoint x{Vec::Constant(1, uq(rng)), Vec::Constant(1, up(rng))};
      const auto g = grad_hamiltonian(m, x);
      const double h = 1e-6;
      PhasePoint a = x, b = x;
      a.q(0) += h;
      b.q(0) -= h;
      const double fdq = (hamiltonian(m, a).H - hamiltonian(m, b).H) / (2 * h);
      a = x;
      b = x;
      a.p(0) += h;
      b.p(0) -= h;
      const double fdp = (hamiltonian(m, a).H - hamiltonian(m, b).H) / (2 * h);
      worst = std::max(worst, std::abs(fdq - g.dq(0)) / std::max(1.0, std::abs(g.dq(0))));
      worst = std::max(worst, std::abs(fdp - g.dp(0)) / std::max(1.0, std::abs(g.dp(0))));
    }
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("mass sensitivity is minus the derivative of the inverse mass") {
  const ModelSpec m = variable_mass();
  for (double q : {0.1, 1.3, 2.9, 4.4}) {
    const double h = 1e-5;
    const Mat inv_a = m.family->M(Vec::Constant(1, q + h)).inverse();
    const Mat inv_b = m.family->M(Vec::Constant(1, q - h)).inverse();
    const Mat fd = -(inv_a - inv_b) / (2 * h);
    const Mat mk = mass_sensitivity(m, Vec::Constant(1, q), 0);
    CHECK((mk - mk.transpose()).norm() == 0.0);
    CHECK((mk - fd).norm() < 1e-6);
  }
}

TEST_CASE("two-dimensional mass sensitivity is symmetric") {
  auto space = PositionSpace::line(2, -5.0, 5.0);
  const ModelSpec m = make_model(harmonic_family(2, 1.0, 2.0, 1.0), space, 1.0);
  const Mat mk = mass_sensitivity(m, Vec::Constant(2, 0.3), 1);
  CHECK((mk - mk.transpose()).norm() == 0.0);
  CHECK(mk.norm() == 0.0);
  CHECK_THROWS_AS(mass_sensitivity(m, Vec::Constant(2, 0.3), 2), Error);
}

TEST_CASE("energy split is exact") {
  const ModelSpec m = variable_mass();
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int k = 0; k < 50; ++k) {
    PhasePoint x{Vec::Constant(1, u(rng)), Vec::Constant(1, u(rng))};
    const Energies e = hamiltonian(m, x);
    CHECK(e.H == e.V + e.T);
    CHECK(e.T == kinetic_energy(m, x));
  }
}

TEST_CASE("velocity and momentum conversions are inverse") {
  const ModelSpec m = variable_mass();
  const Vec q = Vec::Constant(1, 0.7), v = Vec::Constant(1, -1.3);
  const Vec p = momentum_from_velocity(m, q, v);
  CHECK(velocity_from_momentum(m, q, p)(0) == doctest::Approx(v(0)).epsilon(1e-14));
}

TEST_CASE("centrifugal term appears only with position-dependent mass") {
  const ModelSpec m = variable_mass();
  const Coeffs1 c = m.family->eval1(1.0);
  const double p = 1.7;
  // d_q H = V' - p^2 M' / (2 M^2)
  const double expected = std::sin(1.0) - p * p * c.dM / (2 * c.M * c.M);
  CHECK(dqH1(c, p) == doctest::Approx(expected).epsilon(1e-14));
  CHECK(c.dM != 0.0);
  CHECK(pendulum().family->constant_mass());
}

TEST_CASE("damping follows the Einstein relation") {
  const ModelSpec m = variable_mass();
  const Vec q = Vec::Constant(1, 0.9);
  CHECK(damping_matrix(m, q)(0, 0) == doctest::Approx(0.5 * m.beta * m.family->D(q)(0, 0)));
  const auto nodes = sample_nodes(m.space, 32);
  CHECK(einstein_residual(m, nodes, [&](const Vec& x) { return damping_matrix(m, x); }) == 0.0);
  const double off = einstein_residual(m, nodes, [&](const Vec& x) { return 1.5 * damping_matrix(m, x); });
  CHECK(off > 0.1);
}

TEST_CASE("registration rejects invalid models") {
  auto space = PositionSpace::circle(1);
  CHECK_THROWS_AS(make_model(pendulum_family(1, 1.0, 1.0, 1.0), space, 0.0), Error);
  CHECK_THROWS_AS(make_model(pendulum_family(1, 1.0, 1.0, 1.0), space, -1.0), Error);
  CHECK_THROWS_AS(make_model(pendulum_family(1, 1.0, 1.0, 1.0), PositionSpace::circle(2), 1.0), Error);
  CHECK_THROWS_AS(variable_mass_pendulum_family(1.0, 1.0, 1.0, 1.0), Error);
  CHECK_THROWS_AS(harmonic_family(1, -1.0, 1.0, 1.0), Error);
  CHECK_THROWS_AS(PositionSpace::line(1, 1.0, -1.0), Error);
  try {
    make_model(pendulum_family(1, 1.0, 1.0, 0.0), space, 1.0, sample_nodes(space, 8));
    FAIL("zero diffusion accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::invalid_model);
  }
}

TEST_CASE("degenerate mass is rejected") {
  Mat m(2, 2);
  m << 1.0, 0.0, 0.0, 1e-14;
  try {
    checked_mass_inverse(m);
    FAIL("ill-conditioned mass accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::degenerate_mass);
  }
  CHECK_THROWS_AS(checked_mass_inverse(Mat::Constant(1, 1, -1.0)), Error);
}

TEST_CASE("tabulated family reproduces an analytic model") {
  Table1 t;
  t.periodic = true;
  const int n = 256;
  for (int i = 0; i < n; ++i) {
    const double q = two_pi * i / n;
    t.q.push_back(q);
    t.V.push_back(1.0 - std::cos(q));
    t.M.push_back(1.0 + 0.3 * std::cos(q));
    t.D.push_back(1.0);
  }
  const auto fam = tabulated_family(t);
  for (double q : {0.05, 1.0, 3.3, 6.2}) {
    const Coeffs1 c = fam->eval1(q);
    CHECK(c.V == doctest::Approx(1.0 - std::cos(q)).epsilon(1e-6));
    CHECK(c.dV == doctest::Approx(std::sin(q)).epsilon(1e-4));
    CHECK(c.M == doctest::Approx(1.0 + 0.3 * std::cos(q)).epsilon(1e-6));
  }
  Table1 bad = t;
  bad.M[3] = -1.0;
  CHECK_THROWS_AS(tabulated_family(bad), Error);
}

TEST_CASE("circle wrapping") {
  auto space = PositionSpace::circle(1);
  Vec q = Vec::Constant(1, -0.5);
  space.wrap(q);
  CHECK(q(0) == doctest::Approx(two_pi - 0.5));
  CHECK(space.contains(q));
}
