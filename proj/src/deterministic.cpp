#include "klab/error.hpp"
#include "klab/polyfit.hpp"
#include "klab/sde.hpp"

#include <boost/math/tools/roots.hpp>
#include <boost/numeric/odeint.hpp>

#include <algorithm>
#include <cmath>

namespace klab {

namespace {

using State = std::vector<double>;
namespace odeint = boost::numeric::odeint;

struct Dynamics {
  const ModelSpec* model;
  const std::function<Mat(const Vec&)>* damping;
  int n;

  void operator()(const State& x, State& dxdt, double /*t*/) const {
    PhasePoint pt{Vec(n), Vec(n)};
    for (int k = 0; k < n; ++k) {
      pt.q(k) = x[k];
      pt.p(k) = x[n + k];
    }
    const Mat minv = checked_mass_inverse(model->family->M(pt.q));
    const Vec v = minv * pt.p;
    const HamiltonianGradient g = grad_hamiltonian(*model, pt);
    const Vec pdot = -g.dq - (*damping)(pt.q) * v;
    for (int k = 0; k < n; ++k) {
      dxdt[k] = v(k);
      dxdt[n + k] = pdot(k);
    }
  }
};

struct Sample {
  double V, T, H, Hdot;
};

Sample evaluate(const ModelSpec& model, const std::function<Mat(const Vec&)>& damping, const State& x, int n) {
  PhasePoint pt{Vec(n), Vec(n)};
  for (int k = 0; k < n; ++k) {
    pt.q(k) = x[k];
    pt.p(k) = x[n + k];
  }
  const Energies e = hamiltonian(model, pt);
  const Vec v = velocity_from_momentum(model, pt.q, pt.p);
  return {e.V, e.T, e.H, -v.dot(damping(pt.q) * v)};
}

auto make_stepper(double tol) {
  return odeint::make_dense_output(tol, tol, odeint::runge_kutta_dopri5<State>());
}

// States at increasing times, integrated from (0, x0).
std::vector<State> states_at(const Dynamics& dyn, const State& x0, const std::vector<double>& times, double tol) {
  std::vector<State> out;
  out.reserve(times.size());
  State x = x0;
  auto stepper = make_stepper(tol);
  std::vector<double> tt;
  if (times.empty()) return out;
  if (times.front() > 0.0) tt.push_back(0.0);
  tt.insert(tt.end(), times.begin(), times.end());
  const std::size_t skip = tt.size() - times.size();
  std::size_t seen = 0;
  odeint::integrate_times(stepper, dyn, x, tt.begin(), tt.end(), 1e-3, [&](const State& s, double) {
    if (seen++ >= skip) out.push_back(s);
  });
  return out;
}

}  // namespace

DeterministicReport deterministic_energy_audit(const ModelSpec& model, const PhasePoint& x0, double t_end,
                                               const DeterministicOptions& options) {
  if (!options.damping) throw Error(ErrorKind::invalid_model, "deterministic audit needs an explicit damping map");
  if (!(t_end > 0.0)) throw Error(ErrorKind::numerical, "deterministic audit needs t_end > 0");
  const int n = model.dim();
  Dynamics dyn{&model, &options.damping, n};
  State x(2 * n);
  for (int k = 0; k < n; ++k) {
    x[k] = x0.q(k);
    x[n + k] = x0.p(k);
  }
  const State start = x;
  DeterministicReport rep;

  // Sampled trajectory with an FD stencil of half-width hfd around each sample.
  const int ns = std::max(options.samples, 10);
  const double dts = t_end / ns;
  const double hfd = std::min(1e-3, 0.25 * dts);
  std::vector<double> times;
  for (int k = 0; k <= ns; ++k) {
    const double t = k * dts;
    if (k > 0) times.push_back(t - hfd);
    times.push_back(t);
    if (k < ns) times.push_back(t + hfd);
  }
  const auto states = states_at(dyn, start, times, options.tolerance);
  // Every interior sample owns three consecutive states; the ends own two.
  const Sample s0 = evaluate(model, options.damping, start, n);
  rep.H0 = s0.H;
  const double escale = std::max(1.0, std::abs(s0.H));
  double hdot_max = 0.0;
  std::vector<double> hdot_fd, hdot_an;
  std::size_t idx = 0;
  for (int k = 0; k <= ns; ++k) {
    const State* before = k > 0 ? &states[idx++] : nullptr;
    const State& mid = states[idx++];
    const State* after = k < ns ? &states[idx++] : nullptr;
    const Sample s = evaluate(model, options.damping, mid, n);
    rep.t.push_back(k * dts);
    rep.q.push_back(mid[0]);
    rep.p.push_back(mid[n]);
    rep.H.push_back(s.H);
    hdot_max = std::max(hdot_max, std::abs(s.Hdot));
    rep.energy_drift = std::max(rep.energy_drift, std::abs(s.H - s0.H) / escale);
    if (before && after) {
      const double hb = evaluate(model, options.damping, *before, n).H;
      const double ha = evaluate(model, options.damping, *after, n).H;
      hdot_fd.push_back((ha - hb) / (2.0 * hfd));
      hdot_an.push_back(s.Hdot);
    }
  }
  for (std::size_t k = 1; k < rep.H.size(); ++k)
    rep.max_energy_increase = std::max(rep.max_energy_increase, (rep.H[k] - rep.H[k - 1]) / escale);
  const double dscale = hdot_max > 0.0 ? hdot_max : 1.0;
  for (std::size_t k = 0; k < hdot_fd.size(); ++k)
    rep.max_H_dot_rel_error = std::max(rep.max_H_dot_rel_error, std::abs(hdot_fd[k] - hdot_an[k]) / dscale);

  if (n != 1) {
    rep.message = "momentum-zero events are detected for n = 1 only";
    return rep;
  }

  // Momentum zeros: sign changes of p between steps of a dense integration,
  // located by bracketing on the dense output.
  auto stepper = make_stepper(options.tolerance);
  stepper.initialize(start, 0.0, 1e-3);
  std::vector<double> event_times;
  while (stepper.current_time() < t_end && static_cast<int>(event_times.size()) < options.max_events) {
    stepper.do_step(dyn);
    const State& a = stepper.previous_state();
    const State& b = stepper.current_state();
    const double t0 = stepper.previous_time(), t1 = stepper.current_time();
    if (a[1] == 0.0 || a[1] * b[1] > 0.0) continue;
    State tmp(2);
    auto pfun = [&](double t) {
      stepper.calc_state(t, tmp);
      return tmp[1];
    };
    boost::uintmax_t iters = 200;
    const auto br = boost::math::tools::toms748_solve(pfun, t0, t1, a[1], b[1],
                                                      boost::math::tools::eps_tolerance<double>(50), iters);
    const double te = 0.5 * (br.first + br.second);
    if (te <= 0.0 || te > t_end) continue;
    stepper.calc_state(te, tmp);
    const Coeffs1 c = model.family->eval1(tmp[0]);
    if (std::abs(c.dV) < 1e-8) continue;  // equilibrium point, not a break
    event_times.push_back(te);
  }

  for (double te : event_times) {
    BreakEvent ev;
    ev.t = te;
    const double w = std::min(options.fit_half_window, 0.5 * te);
    std::vector<double> ft;
    for (int k = 0; k < options.fit_points; ++k) ft.push_back(te - w + 2.0 * w * k / (options.fit_points - 1));
    const auto fs = states_at(dyn, start, ft, options.tolerance);
    std::vector<double> Hs, Vs, Ts;
    for (const State& s : fs) {
      const Sample v = evaluate(model, options.damping, s, n);
      Hs.push_back(v.H);
      Vs.push_back(v.V);
      Ts.push_back(v.T);
    }
    const auto ce = states_at(dyn, start, {te}, options.tolerance).front();
    const Coeffs1 c = model.family->eval1(ce[0]);
    const double fq = options.damping(Vec::Constant(1, ce[0]))(0, 0);
    ev.q = ce[0];
    ev.dV = c.dV;
    ev.H_dot = evaluate(model, options.damping, ce, n).Hdot;
    const int deg = 6;
    const auto cH = polyfit(ft, Hs, deg, te, w);
    const auto cV = polyfit(ft, Vs, deg, te, w);
    const auto cT = polyfit(ft, Ts, deg, te, w);
    ev.H_ddot_fit = polyfit_derivative(cH, 2, w);
    ev.H_dddot_fit = polyfit_derivative(cH, 3, w);
    ev.V_ddot_fit = polyfit_derivative(cV, 2, w);
    ev.T_ddot_fit = polyfit_derivative(cT, 2, w);
    ev.H_dddot_pred = -2.0 * (c.dV / c.M) * (c.dV / c.M) * fq;
    ev.V_ddot_pred = -c.dV * c.dV / c.M;
    ev.H_dot_max = hdot_max;
    ev.cubic_rel_error = std::abs(ev.H_dddot_fit - ev.H_dddot_pred) / std::abs(ev.H_dddot_pred);
    ev.T_V_rel_error = std::abs(ev.T_ddot_fit + ev.V_ddot_fit) / std::abs(ev.V_ddot_fit);
    ev.pass = ev.cubic_rel_error <= 0.05 && ev.V_ddot_fit < 0.0 && ev.T_V_rel_error <= 0.05 &&
              std::abs(ev.H_ddot_fit) < 1e-3 * hdot_max;
    rep.events.push_back(ev);
  }
  rep.no_events = rep.events.empty();
  if (rep.no_events) rep.message = "no break events";
  return rep;
}

}  // namespace klab
