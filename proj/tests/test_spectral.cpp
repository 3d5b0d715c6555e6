#include "klab/error.hpp"
#include "klab/spectral.hpp"

#include <doctest.h>

#include <cmath>

using namespace klab;

namespace {

ModelSpec pendulum() {
  auto space = PositionSpace::circle(1);
  return make_model(pendulum_family(1, 1.0, 1.0, 1.0), space, 1.0, sample_nodes(space, 64));
}

double d1_error(int n, int order) {
  const double h = two_pi / n;
  const Mat d = central_d1(n, h, order, true);
  Vec u(n), du(n);
  for (int i = 0; i < n; ++i) {
    u(i) = std::sin(i * h);
    du(i) = std::cos(i * h);
  }
  return (d * u - du).lpNorm<Eigen::Infinity>();
}

}  // namespace

TEST_CASE("central difference matrices") {
  for (bool periodic : {true, false})
    for (int order : {2, 4, 8}) {
      const Mat d1 = central_d1(20, 0.1, order, periodic);
      const Mat d2 = central_d2(20, 0.1, order, periodic);
      CHECK((d1 + d1.transpose()).norm() < 1e-12 * d1.norm());
      CHECK((d2 - d2.transpose()).norm() < 1e-12 * d2.norm());
    }
  // Eighth order: halving h cuts the error by 2^8.
  const double ratio = d1_error(16, 8) / d1_error(32, 8);
  CHECK(std::log2(ratio) > 7.5);
  CHECK_THROWS_AS(central_d1(8, 0.1, 8, true), Error);
  CHECK_THROWS_AS(central_d2(9, 0.1, 8, false), Error);
}

TEST_CASE("linearized operators on a small grid") {
  const ModelSpec m = pendulum();
  const PhaseGrid g = PhaseGrid::for_model(m, 16, 20);
  const EquilibriumState eq = build_equilibrium(m, g);
  const LinearizedOperator ops = assemble_linearized_operators(m, eq);
  CHECK(ops.Xi.rows() == 16);
  CHECK(ops.Xi.cols() == 320);
  CHECK(ops.Lambda_gs.rows() == 336);
  const AdjointnessReport a = adjointness_audit(ops, 20, 3);
  CHECK(a.probes == 20);
  CHECK(a.enforced_defect < 1e-12);
  CHECK(a.independent_defect < 0.1);
  CHECK(a.max_form <= 1e-12);
  CHECK(a.max_form_identity < 1e-10);
  CHECK(a.projector_defect < 1e-10);

  const SpectrumReport s = spectrum(ops, {10, 0.5, true});
  CHECK(s.positive_count == 0);
  CHECK(s.max_real_relative <= 1e-6);
  CHECK(s.max_quad_residual < 1e-6);
  CHECK(s.zero_psi_defect < 1e-6);
  CHECK(!s.pairs.empty());
  for (const EigenPairing& p : s.pairs) CHECK(p.high_frequency < 0.5);
}

TEST_CASE("high-frequency fraction") {
  const ModelSpec m = pendulum();
  const PhaseGrid g = PhaseGrid::for_model(m, 16, 16);
  CVec smooth(256), rough(256);
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) {
      smooth(i * 16 + j) = std::cos(g.q(i)) * std::exp(-g.p(j) * g.p(j) / 20.0);
      rough(i * 16 + j) = ((i + j) % 2 == 0) ? 1.0 : -1.0;
    }
  CHECK(high_frequency_fraction(g, smooth) < 1e-3);
  CHECK(high_frequency_fraction(g, rough) == doctest::Approx(1.0));
  CHECK(high_frequency_fraction(g, CVec::Zero(256)) == 0.0);
}

TEST_CASE("entropy remainders are cubic in the perturbation size") {
  const ModelSpec m = pendulum();
  const PhaseGrid g = PhaseGrid::for_model(m, 64, 96);
  const EquilibriumState eq = build_equilibrium(m, g);
  const QuadraticScaling s = quadratic_scaling(eq, m, 0.1);
  CHECK(s.ratio_F == doctest::Approx(8.0).epsilon(0.15));
  CHECK(s.ratio_G == doctest::Approx(8.0).epsilon(0.15));
  CHECK(s.ratio_H == doctest::Approx(8.0).epsilon(0.15));
  CHECK(s.full.max_theta == doctest::Approx(2.0 * s.half.max_theta).epsilon(0.05));
  const QuadraticApprox z = quadratic_entropy_approx(eq.density(), eq, m);
  CHECK(std::abs(z.QF) < 1e-20);
}
