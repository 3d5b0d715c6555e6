#include "klab/fpke.hpp"

#include "klab/error.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace klab {

FokkerPlanck::FokkerPlanck(const ModelSpec& model, const PhaseGrid& grid, FpkeOptions options)
    : model_(model), grid_(grid), options_(options) {
  if (model.dim() != 1) throw Error(ErrorKind::grid, "the grid solver covers one degree of freedom");
  const int nq = grid.nq(), np = grid.np();
  a_.resize(grid.size());
  b_.resize(grid.size());
  dqh_.resize(grid.size());
  m_.resize(static_cast<std::size_t>(nq));
  d_.resize(static_cast<std::size_t>(nq));
  fdamp_.resize(static_cast<std::size_t>(nq));
  for (int i = 0; i < nq; ++i) {
    const auto c = model.family->eval1(grid.q(i));
    const double D = options.diffusion_scale * c.D;
    const double F = options.damping_scale * 0.5 * model.beta * D;
    m_[static_cast<std::size_t>(i)] = c.M;
    d_[static_cast<std::size_t>(i)] = D;
    fdamp_[static_cast<std::size_t>(i)] = F;
    for (int j = 0; j < np; ++j) {
      const double p = grid.p(j);
      const auto k = grid.index(i, j);
      a_[k] = p / c.M;
      dqh_[k] = dqH1(c, p);
      b_[k] = dqh_[k] + F * p / c.M;
    }
  }
}

void FokkerPlanck::apply_adjoint(std::span<const double> f, std::span<double> out) const {
  const int nq = grid_.nq(), np = grid_.np();
  const double cq = 1.0 / (2.0 * grid_.dq());
  const double cp = 1.0 / (2.0 * grid_.dp());
  const double cpp = 1.0 / (grid_.dp() * grid_.dp());
  const std::size_t n = grid_.size();
  thread_local std::vector<double> afb, bfb;
  afb.resize(n);
  bfb.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    afb[k] = a_[k] * f[k];
    bfb[k] = b_[k] * f[k];
  }
  const bool periodic = grid_.periodic_q();
  for (int i = 0; i < nq; ++i) {
    const double hd = 0.5 * d_[static_cast<std::size_t>(i)] * cpp;
    const double* afm = nullptr;
    const double* afp = nullptr;
    if (i > 0) afm = &afb[grid_.index(i - 1, 0)];
    else if (periodic) afm = &afb[grid_.index(nq - 1, 0)];
    if (i < nq - 1) afp = &afb[grid_.index(i + 1, 0)];
    else if (periodic) afp = &afb[grid_.index(0, 0)];
    const double* afc = &afb[grid_.index(i, 0)];
    const double* bf = &bfb[grid_.index(i, 0)];
    const double* fr = &f[grid_.index(i, 0)];
    double* o = &out[grid_.index(i, 0)];
    for (int j = 0; j < np; ++j) {
      // q transport; on line ends the outer face carries no flux, so the
      // cell sees only the inner face flux (af_c + af_nb)/2.
      double tq;
      if (afm && afp) tq = -(afp[j] - afm[j]) * cq;
      else if (afp) tq = -(afp[j] + afc[j]) * cq;
      else tq = (afc[j] + afm[j]) * cq;
      double tp, dif;
      if (j > 0 && j < np - 1) {
        tp = (bf[j + 1] - bf[j - 1]) * cp;
        dif = hd * (fr[j + 1] - 2.0 * fr[j] + fr[j - 1]);
      } else if (j == 0) {
        tp = (bf[1] + bf[0]) * cp;
        dif = hd * (fr[1] - fr[0]);
      } else {
        tp = -(bf[j] + bf[j - 1]) * cp;
        dif = hd * (fr[j - 1] - fr[j]);
      }
      o[j] = tq + tp + dif;
    }
  }
}

std::vector<double> FokkerPlanck::apply_adjoint(std::span<const double> f) const {
  std::vector<double> out(grid_.size());
  apply_adjoint(f, out);
  return out;
}

std::vector<double> FokkerPlanck::apply_adjoint_expanded(std::span<const double> f) const {
  const auto fq = spatial_derivative(grid_, f, Direction::q, 1);
  const auto fp = spatial_derivative(grid_, f, Direction::p, 1);
  const auto fpp = spatial_derivative(grid_, f, Direction::p, 2);
  std::vector<double> out(grid_.size());
  for (int i = 0; i < grid_.nq(); ++i) {
    const auto ii = static_cast<std::size_t>(i);
    for (int j = 0; j < grid_.np(); ++j) {
      const auto k = grid_.index(i, j);
      out[k] = -a_[k] * fq[k] + b_[k] * fp[k] + fdamp_[ii] / m_[ii] * f[k] + 0.5 * d_[ii] * fpp[k];
    }
  }
  return out;
}

std::vector<double> FokkerPlanck::apply_generator(std::span<const double> phi) const {
  const auto uq = spatial_derivative(grid_, phi, Direction::q, 1);
  const auto up = spatial_derivative(grid_, phi, Direction::p, 1);
  const auto upp = spatial_derivative(grid_, phi, Direction::p, 2);
  std::vector<double> out(grid_.size());
  for (int i = 0; i < grid_.nq(); ++i)
    for (int j = 0; j < grid_.np(); ++j) {
      const auto k = grid_.index(i, j);
      out[k] = a_[k] * uq[k] - b_[k] * up[k] + 0.5 * d_[static_cast<std::size_t>(i)] * upp[k];
    }
  return out;
}

double FokkerPlanck::stable_dt(double safety) const {
  double dmax = 0.0, amax = 0.0, bmax = 0.0;
  for (double v : d_) dmax = std::max(dmax, v);
  for (double v : a_) amax = std::max(amax, std::abs(v));
  for (double v : b_) bmax = std::max(bmax, std::abs(v));
  double dt = std::numeric_limits<double>::infinity();
  if (dmax > 0) dt = safety * grid_.dp() * grid_.dp() / dmax;
  const double speed = amax / grid_.dq() + bmax / grid_.dp();
  if (speed > 0) dt = std::min(dt, safety / speed);
  return dt;
}

namespace {

ResidualNorms norms_of(const PhaseGrid& grid, std::span<const double> r, double weight) {
  ResidualNorms n;
  double s = 0.0;
  for (double v : r) {
    n.max_abs = std::max(n.max_abs, std::abs(v));
    s += v * v;
  }
  n.l2 = std::sqrt(s * weight);
  (void)grid;
  return n;
}

}  // namespace

ResidualNorms stationarity_residual(const FokkerPlanck& fp, const EquilibriumState& eq) {
  if (!(fp.grid() == eq.grid)) throw Error(ErrorKind::grid, "equilibrium and operator grids differ");
  const auto r = fp.apply_adjoint(eq.f);
  return norms_of(fp.grid(), r, fp.grid().cell());
}

StationarityStudy stationarity_refinement(const ModelSpec& model, int nq, int np, double p_max,
                                          FpkeOptions options, bool require_order) {
  if (p_max <= 0.0) p_max = default_p_max(model);
  const PhaseGrid g1 = PhaseGrid::for_model(model, nq, np, p_max);
  const PhaseGrid g2 = PhaseGrid::for_model(model, 2 * nq, 2 * np, p_max);
  StationarityStudy s;
  s.coarse = stationarity_residual(FokkerPlanck(model, g1, options), build_equilibrium(model, g1));
  s.fine = stationarity_residual(FokkerPlanck(model, g2, options), build_equilibrium(model, g2));
  s.ratio = s.coarse.max_abs / s.fine.max_abs;
  s.order_estimate = std::log2(s.ratio);
  if (require_order && !(s.order_estimate >= 1.5)) {
    std::ostringstream os;
    os << "stationarity residual refinement order " << s.order_estimate << " < 1.5";
    throw Error(ErrorKind::discretization_defect, os.str());
  }
  return s;
}

void rk4_step(const FokkerPlanck& fp, std::vector<double>& f, double dt) {
  const std::size_t n = f.size();
  thread_local std::vector<double> k1, k2, k3, k4, tmp;
  k1.resize(n);
  k2.resize(n);
  k3.resize(n);
  k4.resize(n);
  tmp.resize(n);
  fp.apply_adjoint(f, k1);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = f[i] + 0.5 * dt * k1[i];
  fp.apply_adjoint(tmp, k2);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = f[i] + 0.5 * dt * k2[i];
  fp.apply_adjoint(tmp, k3);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = f[i] + dt * k3[i];
  fp.apply_adjoint(tmp, k4);
  const double c = dt / 6.0;
  for (std::size_t i = 0; i < n; ++i) f[i] += c * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]);
}

EvolutionResult evolve(const FokkerPlanck& fp, const EvolutionRun& run, const Observer& observer,
                       bool keep_snapshots) {
  if (fp.options().damping_scale != 1.0)
    throw Error(ErrorKind::invalid_model, "evolution runs require the Einstein damping F = beta D / 2");
  if (!(run.initial.grid == fp.grid())) throw Error(ErrorKind::grid, "initial field is on a different grid");
  if (run.snapshot_every < 1) throw Error(ErrorKind::grid, "snapshot_every must be >= 1");
  EvolutionResult res;
  const double dt_max = fp.stable_dt();
  double dt = run.dt > 0.0 ? run.dt : dt_max;
  if (dt > dt_max * (1.0 + 1e-12)) {
    std::ostringstream os;
    os << "dt = " << dt << " exceeds the stability bound " << dt_max;
    throw Error(ErrorKind::stability, os.str());
  }
  const long steps = std::max<long>(1, static_cast<long>(std::ceil(run.t_end / dt - 1e-9)));
  dt = run.t_end / static_cast<double>(steps);
  res.dt = dt;
  res.steps = steps;

  DensityField cur = run.initial;
  const double mass0 = total_mass(cur);
  double mass_prev = mass0;

  auto diag = [&](long step) {
    StepDiagnostics d;
    d.step = step;
    d.t = cur.t;
    d.mass = total_mass(cur);
    d.min_f = *std::min_element(cur.values.begin(), cur.values.end());
    d.boundary_mass = boundary_mass(cur);
    return d;
  };
  auto emit = [&](long step) {
    const auto d = diag(step);
    if (d.boundary_mass > 1e-8) res.boundary_warning = true;
    res.diagnostics.push_back(d);
    if (observer) observer(cur, d);
    if (keep_snapshots) res.snapshots.push_back(cur);
  };

  emit(0);
  std::vector<double> work = cur.values;
  const double t0 = cur.t;
  for (long s = 1; s <= steps; ++s) {
    rk4_step(fp, work, dt);
    double mass = 0.0, fmin = work[0], fmax = work[0];
    bool finite = true;
    for (double v : work) {
      mass += v;
      fmin = std::min(fmin, v);
      fmax = std::max(fmax, v);
      finite = finite && std::isfinite(v);
    }
    mass *= fp.grid().cell();
    const double drift = std::abs(mass - mass_prev);
    if (!finite || fmin < -1e-10 * fmax || drift > 1e-9) {
      std::ostringstream os;
      if (!finite) os << "nonfinite values";
      else if (drift > 1e-9) os << "mass drift " << drift;
      else os << "negative density " << fmin << " below -1e-10 max f";
      os << " at step " << s << " (t = " << t0 + s * dt << ")";
      res.aborted = true;
      res.abort_reason = os.str();
      break;
    }
    res.max_step_mass_drift = std::max(res.max_step_mass_drift, drift);
    mass_prev = mass;
    cur.values = work;
    cur.t = t0 + static_cast<double>(s) * dt;
    if (s % run.snapshot_every == 0 || s == steps) emit(s);
  }
  res.total_mass_drift = std::abs(total_mass(cur) - mass0);
  res.final_state = cur;
  return res;
}

namespace {

DensityField midpoint(const DensityField& a, const DensityField& b) {
  DensityField m = a;
  for (std::size_t k = 0; k < m.values.size(); ++k) m.values[k] = 0.5 * (a.values[k] + b.values[k]);
  m.t = 0.5 * (a.t + b.t);
  return m;
}

// h = f / g with the positivity floor counted rather than thrown.
std::vector<double> floored_conditional(const DensityField& f, const std::vector<double>& g, std::size_t& floored,
                                        std::vector<char>* mask = nullptr) {
  const auto& gr = f.grid;
  const double gmax = *std::max_element(g.begin(), g.end());
  const double floor = 1e-13 * gmax;
  std::vector<double> h(gr.size());
  if (mask) mask->assign(static_cast<std::size_t>(gr.nq()), 0);
  for (int i = 0; i < gr.nq(); ++i) {
    double gi = g[static_cast<std::size_t>(i)];
    if (!(gi > floor)) {
      ++floored;
      if (mask) (*mask)[static_cast<std::size_t>(i)] = 1;
      gi = floor;
    }
    for (int j = 0; j < gr.np(); ++j) h[gr.index(i, j)] = f(i, j) / gi;
  }
  return h;
}

}  // namespace

PositionResidual position_pde_residual(const FokkerPlanck& fp, const DensityField& before,
                                       const DensityField& after, double dt) {
  const auto& gr = fp.grid();
  const auto gb = marginalize_position(before).values;
  const auto ga = marginalize_position(after).values;
  const DensityField mid = midpoint(before, after);
  std::vector<double> flux(static_cast<std::size_t>(gr.nq()), 0.0);
  const auto a = fp.velocity();
  for (int i = 0; i < gr.nq(); ++i) {
    double s = 0.0;
    for (int j = 0; j < gr.np(); ++j) s += a[gr.index(i, j)] * mid(i, j);
    flux[static_cast<std::size_t>(i)] = s * gr.dp();
  }
  const auto div = derivative_q(gr, flux, 1);
  PositionResidual out;
  out.r.resize(flux.size());
  for (std::size_t i = 0; i < flux.size(); ++i) out.r[i] = (ga[i] - gb[i]) / dt + div[i];
  out.norms = norms_of(gr, out.r, gr.dq());
  return out;
}

ConditionalRhs conditional_rhs(const FokkerPlanck& fp, const DensityField& f) {
  const auto& gr = fp.grid();
  ConditionalRhs out;
  out.g = marginalize_position(f).values;
  std::vector<char> mask;
  out.h = floored_conditional(f, out.g, out.floored, &mask);
  ConditionalField hc{out.h, {}};
  const auto mean = conditional_mean(gr, hc);
  const auto& gamma = mean.gamma;
  const auto m = fp.mass();
  const auto D = fp.diffusion();
  const auto F = fp.damping();
  const auto a = fp.velocity();
  const auto dqh = fp.dqH();

  std::vector<double> log_g(out.g.size()), gam_m(out.g.size());
  const double gmax = *std::max_element(out.g.begin(), out.g.end());
  for (std::size_t i = 0; i < out.g.size(); ++i) {
    log_g[i] = std::log(std::max(out.g[i], 1e-13 * gmax));
    gam_m[i] = gamma[i] / m[i];
  }
  const auto dlog_g = derivative_q(gr, log_g, 1);
  const auto dgam_m = derivative_q(gr, gam_m, 1);

  // Operators of the parity block form.
  auto op_A = [&](const std::vector<double>& phi) {
    const auto pp = spatial_derivative(gr, phi, Direction::p, 1);
    const auto ppp = spatial_derivative(gr, phi, Direction::p, 2);
    std::vector<double> r(gr.size());
    for (int i = 0; i < gr.nq(); ++i) {
      const auto ii = static_cast<std::size_t>(i);
      const double c = F[ii] / m[ii] + gam_m[ii] * dlog_g[ii] + dgam_m[ii];
      for (int j = 0; j < gr.np(); ++j) {
        const auto k = gr.index(i, j);
        r[k] = c * phi[k] + F[ii] * a[k] * pp[k] + 0.5 * D[ii] * ppp[k];
      }
    }
    return r;
  };
  auto op_B = [&](const std::vector<double>& phi) {
    const auto pq = spatial_derivative(gr, phi, Direction::q, 1);
    const auto pp = spatial_derivative(gr, phi, Direction::p, 1);
    std::vector<double> r(gr.size());
    for (int i = 0; i < gr.nq(); ++i) {
      const auto ii = static_cast<std::size_t>(i);
      for (int j = 0; j < gr.np(); ++j) {
        const auto k = gr.index(i, j);
        r[k] = dqh[k] * pp[k] - a[k] * pq[k] - a[k] * dlog_g[ii] * phi[k];
      }
    }
    return r;
  };

  // Direct form.
  {
    const auto hq = spatial_derivative(gr, out.h, Direction::q, 1);
    const auto hp = spatial_derivative(gr, out.h, Direction::p, 1);
    const auto hpp = spatial_derivative(gr, out.h, Direction::p, 2);
    out.direct.resize(gr.size());
    for (int i = 0; i < gr.nq(); ++i) {
      const auto ii = static_cast<std::size_t>(i);
      for (int j = 0; j < gr.np(); ++j) {
        const auto k = gr.index(i, j);
        const double varpi = gr.p(j) - gamma[ii];
        const double c = F[ii] / m[ii] - varpi / m[ii] * dlog_g[ii] + dgam_m[ii];
        out.direct[k] = dqh[k] * hp[k] - a[k] * hq[k] + F[ii] * a[k] * hp[k] + 0.5 * D[ii] * hpp[k] + c * out.h[k];
      }
    }
  }
  const auto split = parity_split(gr, out.h);
  const auto Ap = op_A(split.plus), Am = op_A(split.minus);
  const auto Bp = op_B(split.plus), Bm = op_B(split.minus);
  out.parity_top.resize(gr.size());
  out.parity_bottom.resize(gr.size());
  out.parity.resize(gr.size());
  for (std::size_t k = 0; k < gr.size(); ++k) {
    out.parity_top[k] = Ap[k] + Bm[k];
    out.parity_bottom[k] = Bp[k] + Am[k];
    out.parity[k] = out.parity_top[k] + out.parity_bottom[k];
  }
  return out;
}

ConditionalResidual conditional_pde_residual(const FokkerPlanck& fp, const DensityField& before,
                                             const DensityField& after, double dt) {
  const auto& gr = fp.grid();
  ConditionalResidual out;
  std::size_t fl_b = 0, fl_a = 0;
  std::vector<char> mask_b, mask_a;
  const auto hb = floored_conditional(before, marginalize_position(before).values, fl_b, &mask_b);
  const auto ha = floored_conditional(after, marginalize_position(after).values, fl_a, &mask_a);
  const auto rhs = conditional_rhs(fp, midpoint(before, after));
  out.rhs = rhs.direct;
  out.dh_dt.resize(gr.size());
  out.r.resize(gr.size());
  double scale = 0.0, diff = 0.0, s2 = 0.0;
  for (int i = 0; i < gr.nq(); ++i) {
    const auto ii = static_cast<std::size_t>(i);
    const bool skip = mask_a[ii] || mask_b[ii];
    if (skip) ++out.floored;
    for (int j = 0; j < gr.np(); ++j) {
      const auto k = gr.index(i, j);
      out.dh_dt[k] = (ha[k] - hb[k]) / dt;
      out.r[k] = out.dh_dt[k] - rhs.direct[k];
      scale = std::max(scale, std::abs(rhs.direct[k]));
      diff = std::max(diff, std::abs(rhs.parity[k] - rhs.direct[k]));
      if (skip) continue;
      out.norms.max_abs = std::max(out.norms.max_abs, std::abs(out.r[k]));
      s2 += out.r[k] * out.r[k];
    }
  }
  out.norms.l2 = std::sqrt(s2 * gr.cell());
  out.parity_agreement = scale > 0 ? diff / scale : diff;
  out.floored += rhs.floored;
  return out;
}

}  // namespace klab
