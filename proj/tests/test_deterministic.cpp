#include "klab/error.hpp"
#include "klab/sde.hpp"

#include <doctest.h>

#include <cmath>

using namespace klab;

namespace {

ModelSpec pendulum() {
  auto space = PositionSpace::circle(1);
  return make_model(pendulum_family(1, 1.0, 1.0, 1.0), space, 1.0, sample_nodes(space, 64));
}

PhasePoint point(double q, double p) { return {Vec::Constant(1, q), Vec::Constant(1, p)}; }

auto constant_damping(double f) {
  return [f](const Vec& q) { return Mat::Constant(q.size(), q.size(), f); };
}

}  // namespace

TEST_CASE("undamped motion conserves energy") {
  DeterministicOptions opt;
  opt.damping = constant_damping(0.0);
  opt.samples = 200;
  const DeterministicReport r = deterministic_energy_audit(pendulum(), point(2.0, 0.0), 10.0, opt);
  CHECK(r.energy_drift < 1e-9);
  CHECK(r.H0 == doctest::Approx(1.0 - std::cos(2.0)));
}

TEST_CASE("damped motion loses energy at the dissipation rate") {
  DeterministicOptions opt;
  opt.damping = constant_damping(0.5);
  opt.samples = 400;
  const DeterministicReport r = deterministic_energy_audit(pendulum(), point(2.5, 0.0), 8.0, opt);
  CHECK(r.max_energy_increase <= 0.0);
  CHECK(r.max_H_dot_rel_error < 1e-5);
  CHECK(r.H.back() < r.H.front());
  REQUIRE(!r.events.empty());
  const BreakEvent& ev = r.events.front();
  CHECK(ev.pass);
  CHECK(ev.cubic_rel_error < 0.05);
  CHECK(ev.V_ddot_fit < 0.0);
  CHECK(std::abs(ev.H_dot) < 1e-8);
}

TEST_CASE("a trajectory at rest at the minimum has no break events") {
  DeterministicOptions opt;
  opt.damping = constant_damping(0.5);
  opt.samples = 50;
  const DeterministicReport r = deterministic_energy_audit(pendulum(), point(0.0, 0.0), 2.0, opt);
  CHECK(r.no_events);
  CHECK(r.message == "no break events");
}

TEST_CASE("deterministic audit input errors") {
  DeterministicOptions opt;
  CHECK_THROWS_AS(deterministic_energy_audit(pendulum(), point(1.0, 0.0), 1.0, opt), Error);
  opt.damping = constant_damping(0.1);
  CHECK_THROWS_AS(deterministic_energy_audit(pendulum(), point(1.0, 0.0), 0.0, opt), Error);
}
