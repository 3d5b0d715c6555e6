#include "klab/sde.hpp"

#include "klab/error.hpp"
#include "klab/philox.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <string>
#include <thread>

namespace klab {

namespace {

// Counter domain for initial draws, disjoint from step counters.
constexpr std::uint64_t kInitCounter = std::uint64_t{1} << 62;

double wrap_angle(double q) {
  double r = std::fmod(q, two_pi);
  if (r < 0.0) r += two_pi;
  if (r >= two_pi) r = 0.0;
  return r;
}

template <class Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, count / 1024 + 1));
  if (threads == 1) {
    fn(std::size_t{0}, count);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (count + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t lo = t * chunk, hi = std::min(count, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
  }
  for (auto& th : pool) th.join();
}

Mat sqrt_psd(const Mat& d) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (d + d.transpose()));
  Vec ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

struct ParticleRates {
  double H = 0, T = 0, V = 0;
  double LH = 0;  // generator applied to H
  double LT = 0;  // generator applied to T
  double pp = 0;  // first-coordinate p^2 (n = 1 conditional forms)
  double dV = 0, M = 1, D = 0, F = 0;
};

ParticleRates particle_rates(const ModelSpec& model, const Ensemble& e, std::size_t i) {
  ParticleRates r;
  const int n = e.n;
  if (n == 1) {
    const double q = e.q[i], p = e.p[i];
    const Coeffs1 c = model.family->eval1(q);
    const double f = 0.5 * model.beta * c.D;
    r.V = c.V;
    r.T = 0.5 * p * p / c.M;
    r.H = r.V + r.T;
    r.LH = 0.5 * c.D / c.M - f * p * p / (c.M * c.M);
    r.LT = r.LH - c.dV * p / c.M;
    r.pp = p * p;
    r.dV = c.dV;
    r.M = c.M;
    r.D = c.D;
    r.F = f;
    return r;
  }
  const PhasePoint x = e.point(i);
  const Mat minv = checked_mass_inverse(model.family->M(x.q));
  const Mat dm = model.family->D(x.q);
  const Mat fm = damping_matrix(model, x.q);
  const Vec v = minv * x.p;
  r.V = model.family->V(x.q);
  r.T = 0.5 * x.p.dot(v);
  r.H = r.V + r.T;
  r.LH = 0.5 * (minv * dm).trace() - v.dot(fm * v);
  r.LT = r.LH - model.family->dV(x.q).dot(v);
  return r;
}

}  // namespace

Ensemble::Ensemble(int dim, std::size_t particles, std::uint64_t s)
    : n(dim),
      count(particles),
      q(particles * static_cast<std::size_t>(dim), 0.0),
      p(particles * static_cast<std::size_t>(dim), 0.0),
      flagged(particles, 0),
      seed(s) {
  if (dim < 1 || particles < 1) throw Error(ErrorKind::invalid_model, "ensemble needs n >= 1 and N >= 1");
}

PhasePoint Ensemble::point(std::size_t i) const {
  PhasePoint x{Vec(n), Vec(n)};
  for (int k = 0; k < n; ++k) {
    x.q(k) = q[i * n + k];
    x.p(k) = p[i * n + k];
  }
  return x;
}

void Ensemble::set(std::size_t i, const PhasePoint& x) {
  for (int k = 0; k < n; ++k) {
    q[i * n + k] = x.q(k);
    p[i * n + k] = x.p(k);
  }
}

std::size_t Ensemble::flagged_count() const {
  return static_cast<std::size_t>(std::count(flagged.begin(), flagged.end(), 1));
}

std::size_t worker_threads() {
  if (const char* s = std::getenv("KLAB_THREADS")) {
    const long v = std::strtol(s, nullptr, 10);
    if (v > 0) return static_cast<std::size_t>(v);
  }
  return 1;
}

void em_step(const ModelSpec& model, Ensemble& e, double dt, std::size_t threads) {
  if (!(dt > 0.0)) throw Error(ErrorKind::numerical, "em_step requires dt > 0");
  if (e.n != model.dim()) throw Error(ErrorKind::invalid_model, "ensemble dimension does not match the model");
  const double sdt = std::sqrt(dt);
  const std::uint64_t k = e.step;
  const bool circle = model.space.axes.front().topology == Topology::circle;

  if (e.n == 1) {
    const Family& fam = *model.family;
    const double beta = model.beta;
    // Step k uses variate k % 2 of the pair at counter k / 2.
    const bool odd = (k & 1u) != 0;
    const bool have_spare = odd && e.spare_step == k && e.spare.size() == e.count;
    if (!odd) e.spare.resize(e.count);
    parallel_for(e.count, threads, [&](std::size_t lo, std::size_t hi) {
      for (std::size_t i = lo; i < hi; ++i) {
        if (e.flagged[i]) continue;
        double z;
        if (have_spare) {
          z = e.spare[i];
        } else {
          const auto [z0, z1] = normal_pair(e.seed, i, k / 2);
          z = odd ? z1 : z0;
          if (!odd) e.spare[i] = z1;
        }
        const double q = e.q[i], p = e.p[i];
        const Coeffs1 c = fam.eval1(q);
        const double a = p / c.M;
        const double dqh = c.dV - 0.5 * p * p * c.dM / (c.M * c.M);
        double qn = q + a * dt;
        const double pn = p - (dqh + 0.5 * beta * c.D * a) * dt + std::sqrt(c.D) * sdt * z;
        if (!std::isfinite(qn) || !std::isfinite(pn)) {
          e.flagged[i] = 1;
          continue;
        }
        if (circle) qn = wrap_angle(qn);
        e.q[i] = qn;
        e.p[i] = pn;
      }
    });
    e.spare_step = odd ? ~std::uint64_t{0} : k + 1;
  } else {
    const int n = e.n;
    parallel_for(e.count, threads, [&](std::size_t lo, std::size_t hi) {
      Vec z(n);
      for (std::size_t i = lo; i < hi; ++i) {
        if (e.flagged[i]) continue;
        for (int j = 0; j < n; j += 2) {
          const auto [z0, z1] = normal_pair(e.seed, i, k, static_cast<std::uint32_t>(j / 2));
          z(j) = z0;
          if (j + 1 < n) z(j + 1) = z1;
        }
        PhasePoint x = e.point(i);
        const Mat minv = checked_mass_inverse(model.family->M(x.q));
        const Vec v = minv * x.p;
        const HamiltonianGradient g = grad_hamiltonian(model, x);
        const Mat fm = damping_matrix(model, x.q);
        const Mat sd = sqrt_psd(model.family->D(x.q));
        Vec qn = x.q + v * dt;
        Vec pn = x.p - (g.dq + fm * v) * dt + sd * z * sdt;
        if (!qn.allFinite() || !pn.allFinite()) {
          e.flagged[i] = 1;
          continue;
        }
        model.space.wrap(qn);
        e.set(i, {qn, pn});
      }
    });
  }
  e.step = k + 1;
  e.t += dt;
}

Ensemble point_ensemble(const ModelSpec& model, const PhasePoint& x, std::size_t count, std::uint64_t seed) {
  Ensemble e(model.dim(), count, seed);
  PhasePoint y = x;
  model.space.wrap(y.q);
  for (std::size_t i = 0; i < count; ++i) e.set(i, y);
  return e;
}

Ensemble gaussian_ensemble(const ModelSpec& model, const PhasePoint& mean, double sd_q, double sd_p,
                           std::size_t count, std::uint64_t seed) {
  const int n = model.dim();
  Ensemble e(n, count, seed);
  for (std::size_t i = 0; i < count; ++i) {
    PhasePoint x{Vec(n), Vec(n)};
    for (int k = 0; k < n; ++k) {
      const auto [zq, zp] = normal_pair(seed, i, kInitCounter, static_cast<std::uint32_t>(k));
      x.q(k) = mean.q(k) + sd_q * zq;
      x.p(k) = mean.p(k) + sd_p * zp;
    }
    model.space.wrap(x.q);
    e.set(i, x);
  }
  return e;
}

Ensemble equilibrium_ensemble(const ModelSpec& model, std::size_t count, std::uint64_t seed, int table_nodes) {
  if (model.dim() != 1) throw Error(ErrorKind::invalid_model, "equilibrium sampling is implemented for n = 1");
  if (table_nodes < 16) throw Error(ErrorKind::grid, "too few table nodes");
  const Family& fam = *model.family;
  const bool circle = model.space.axes.front().topology == Topology::circle;
  double lo = 0.0, hi = two_pi;
  if (!circle) std::tie(lo, hi) = default_line_bounds(fam, model.beta);
  const double h = (hi - lo) / table_nodes;
  // Piecewise-constant density on cells, evaluated at cell centres.
  std::vector<double> logw(table_nodes);
  for (int c = 0; c < table_nodes; ++c) {
    const Coeffs1 k = fam.eval1(lo + (c + 0.5) * h);
    logw[c] = -model.beta * k.V + 0.5 * std::log(k.M);
  }
  const double shift = *std::max_element(logw.begin(), logw.end());
  std::vector<double> cdf(table_nodes + 1, 0.0);
  for (int c = 0; c < table_nodes; ++c) cdf[c + 1] = cdf[c] + std::exp(logw[c] - shift);
  const double total = cdf.back();
  for (double& v : cdf) v /= total;

  Ensemble e(1, count, seed);
  const double temp = model.temperature();
  for (std::size_t i = 0; i < count; ++i) {
    const auto [u, unused] = uniform_pair(seed, i, kInitCounter);
    (void)unused;
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    const auto c = std::clamp<std::ptrdiff_t>(it - cdf.begin() - 1, 0, table_nodes - 1);
    const double mass = cdf[c + 1] - cdf[c];
    const double frac = mass > 0.0 ? (u - cdf[c]) / mass : 0.5;
    double q = lo + (static_cast<double>(c) + std::clamp(frac, 0.0, 1.0)) * h;
    if (circle) q = wrap_angle(q);
    const auto [z, unused2] = normal_pair(seed, i, kInitCounter + 1);
    (void)unused2;
    e.q[i] = q;
    e.p[i] = std::sqrt(temp * fam.eval1(q).M) * z;
  }
  return e;
}

MeanSe batch_mean(std::span<const double> x, std::span<const unsigned char> exclude, int batches) {
  std::vector<double> v;
  v.reserve(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    if (exclude.empty() || !exclude[i]) v.push_back(x[i]);
  MeanSe r;
  if (v.empty()) return {std::nan(""), std::nan("")};
  double s = 0.0;
  for (double a : v) s += a;
  r.mean = s / static_cast<double>(v.size());
  const std::size_t b = std::min<std::size_t>(static_cast<std::size_t>(std::max(batches, 2)), v.size());
  if (b < 2) return r;
  const std::size_t per = v.size() / b;
  std::vector<double> means(b);
  for (std::size_t k = 0; k < b; ++k) {
    double bs = 0.0;
    for (std::size_t i = k * per; i < (k + 1) * per; ++i) bs += v[i];
    means[k] = bs / static_cast<double>(per);
  }
  double m = 0.0;
  for (double a : means) m += a;
  m /= static_cast<double>(b);
  double ss = 0.0;
  for (double a : means) ss += (a - m) * (a - m);
  r.se = std::sqrt(ss / static_cast<double>(b - 1) / static_cast<double>(b));
  return r;
}

namespace {

MomentRow moment_row(const ModelSpec& model, const Ensemble& e) {
  const std::size_t N = e.count;
  std::vector<double> H(N), T(N), V(N), drift(N), q(N), p(N), qq(N), pp(N);
  for (std::size_t i = 0; i < N; ++i) {
    if (e.flagged[i]) continue;
    const ParticleRates r = particle_rates(model, e, i);
    H[i] = r.H;
    T[i] = r.T;
    V[i] = r.V;
    drift[i] = r.LH;
    q[i] = e.q[i * e.n];
    p[i] = e.p[i * e.n];
  }
  MomentRow row;
  row.t = e.t;
  row.H = batch_mean(H, e.flagged);
  row.T = batch_mean(T, e.flagged);
  row.V = batch_mean(V, e.flagged);
  row.drift = batch_mean(drift, e.flagged);
  row.q_mean = batch_mean(q, e.flagged);
  row.p_mean = batch_mean(p, e.flagged);
  for (std::size_t i = 0; i < N; ++i) {
    qq[i] = (q[i] - row.q_mean.mean) * (q[i] - row.q_mean.mean);
    pp[i] = (p[i] - row.p_mean.mean) * (p[i] - row.p_mean.mean);
  }
  row.q_var = batch_mean(qq, e.flagged);
  row.p_var = batch_mean(pp, e.flagged);
  row.flagged = e.flagged_count();
  return row;
}

PhaseGrid histogram_grid(const ModelSpec& model, const HistogramSpec& spec) {
  const bool circle = model.space.axes.front().topology == Topology::circle;
  GridAxis qa;
  if (circle) {
    qa = GridAxis{spec.nq, spec.q_origin, spec.q_origin + two_pi, Boundary::periodic};
  } else {
    qa = GridAxis{spec.nq, spec.q_lo, spec.q_hi, Boundary::dirichlet_zero};
  }
  return PhaseGrid(qa, GridAxis{spec.np, -spec.p_max, spec.p_max, Boundary::dirichlet_zero});
}

}  // namespace

DensityField histogram_density(const ModelSpec& model, const Ensemble& e, const HistogramSpec& spec) {
  if (model.dim() != 1) throw Error(ErrorKind::invalid_model, "histograms are implemented for n = 1");
  if (!(spec.p_max > 0.0)) throw Error(ErrorKind::grid, "histogram needs p_max > 0");
  DensityField f{histogram_grid(model, spec), {}, e.t};
  f.values.assign(f.grid.size(), 0.0);
  const bool circle = f.grid.periodic_q();
  const double dq = f.grid.dq(), dp = f.grid.dp();
  std::size_t used = 0;
  for (std::size_t i = 0; i < e.count; ++i) {
    if (e.flagged[i]) continue;
    ++used;
    long bi;
    if (circle) {
      const double s = wrap_angle(e.q[i] - spec.q_origin + 0.5 * dq);
      bi = std::min<long>(static_cast<long>(s / dq), spec.nq - 1);
    } else {
      const double s = (e.q[i] - spec.q_lo) / dq;
      if (s < 0.0 || s >= spec.nq) continue;
      bi = static_cast<long>(s);
    }
    const double sp = (e.p[i] + spec.p_max) / dp;
    if (sp < 0.0 || sp >= spec.np) continue;
    f(static_cast<int>(bi), static_cast<int>(sp)) += 1.0;
  }
  const double norm = used > 0 ? 1.0 / (static_cast<double>(used) * f.grid.cell()) : 0.0;
  for (double& v : f.values) v *= norm;
  return f;
}

DensityField coarsen_density(const DensityField& f, int fq, int fp) {
  const PhaseGrid& g = f.grid;
  if (fq < 1 || fp < 1 || g.nq() % fq != 0 || g.np() % fp != 0)
    throw Error(ErrorKind::grid, "coarsening factors must divide the grid");
  const int cq = g.nq() / fq, cp = g.np() / fp;
  GridAxis qa = g.q_axis();
  qa.n = cq;
  if (g.periodic_q()) {
    const double shift = (fq % 2 == 0) ? -0.5 * g.dq() : 0.0;
    qa.lo += shift;
    qa.hi += shift;
  }
  GridAxis pa = g.p_axis();
  pa.n = cp;
  DensityField c{PhaseGrid(qa, pa), std::vector<double>(static_cast<std::size_t>(cq) * cp, 0.0), f.t};
  const int half = fq / 2;
  for (int i = 0; i < g.nq(); ++i) {
    int ci;
    if (g.periodic_q()) {
      ci = ((i + half) / fq) % cq;
    } else {
      ci = i / fq;
    }
    for (int j = 0; j < g.np(); ++j) c(ci, j / fp) += f(i, j);
  }
  const double scale = g.cell() / c.grid.cell();
  for (double& v : c.values) v *= scale;
  return c;
}

HistogramSpec matching_histogram(const PhaseGrid& fine, int fq, int fp) {
  HistogramSpec s;
  s.nq = fine.nq() / fq;
  s.np = fine.np() / fp;
  s.p_max = fine.p_axis().hi;
  if (fine.periodic_q()) {
    s.q_origin = fine.q_axis().lo + ((fq % 2 == 0) ? -0.5 * fine.dq() : 0.0);
  } else {
    s.q_lo = fine.q_axis().lo;
    s.q_hi = fine.q_axis().hi;
  }
  return s;
}

double l1_distance(const DensityField& a, const DensityField& b) {
  if (a.values.size() != b.values.size()) throw Error(ErrorKind::grid, "l1_distance: grid mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) s += std::abs(a.values[i] - b.values[i]);
  return s * a.grid.cell();
}

SimulationResult simulate_ensemble(const ModelSpec& model, Ensemble initial, const SimulationConfig& config) {
  if (!(config.dt > 0.0) || !(config.t_end >= 0.0) || config.sample_every < 1)
    throw Error(ErrorKind::schema, "simulation needs dt > 0, t_end >= 0, sample_every >= 1");
  SimulationResult res;
  res.steps = config.t_end > 0.0 ? static_cast<long>(std::ceil(config.t_end / config.dt - 1e-9)) : 0;
  res.dt = res.steps > 0 ? config.t_end / static_cast<double>(res.steps) : config.dt;
  Ensemble e = std::move(initial);
  const std::size_t limit = e.count / 1000;
  res.moments.push_back(moment_row(model, e));
  for (long s = 1; s <= res.steps; ++s) {
    em_step(model, e, res.dt, config.threads);
    if (s % config.sample_every == 0 || s == res.steps) res.moments.push_back(moment_row(model, e));
    if (e.flagged_count() > limit) {
      res.failed = true;
      res.failure = std::to_string(e.flagged_count()) + " nonfinite particles at step " + std::to_string(s);
      break;
    }
  }
  if (config.histogram.nq > 0) res.histogram = histogram_density(model, e, config.histogram);
  res.final_ensemble = std::move(e);
  return res;
}

EnergyInterval energy_interval(const ModelSpec& model, const Ensemble& a, const Ensemble& b, int bins,
                               int min_per_bin) {
  if (a.count != b.count || a.n != b.n) throw Error(ErrorKind::numerical, "energy_interval: ensemble mismatch");
  const double dt = b.t - a.t;
  if (!(dt > 0.0)) throw Error(ErrorKind::numerical, "energy_interval: empty interval");
  const std::size_t N = a.count;
  std::vector<unsigned char> excl(N);
  std::vector<double> fdH(N), thH(N), dH(N), fdT(N), thT(N), dT(N);
  std::vector<ParticleRates> ra(N);
  for (std::size_t i = 0; i < N; ++i) {
    excl[i] = a.flagged[i] || b.flagged[i];
    if (excl[i]) continue;
    ra[i] = particle_rates(model, a, i);
    const ParticleRates rb = particle_rates(model, b, i);
    fdH[i] = (rb.H - ra[i].H) / dt;
    thH[i] = ra[i].LH;
    dH[i] = fdH[i] - thH[i];
    fdT[i] = (rb.T - ra[i].T) / dt;
    thT[i] = ra[i].LT;
    dT[i] = fdT[i] - thT[i];
  }
  EnergyInterval r;
  r.t0 = a.t;
  r.t1 = b.t;
  r.fd_H = batch_mean(fdH, excl);
  r.theory_H = batch_mean(thH, excl);
  r.diff_H = batch_mean(dH, excl);
  r.fd_T = batch_mean(fdT, excl);
  r.theory_T = batch_mean(thT, excl);
  r.diff_T = batch_mean(dT, excl);
  r.z_H = r.diff_H.se > 0.0 ? r.diff_H.mean / r.diff_H.se : (r.diff_H.mean == 0.0 ? 0.0 : INFINITY);
  r.z_T = r.diff_T.se > 0.0 ? r.diff_T.mean / r.diff_T.se : (r.diff_T.mean == 0.0 ? 0.0 : INFINITY);

  if (a.n != 1) {
    r.conditional_H = r.conditional_T = std::nan("");
    return r;
  }
  // Conditional moments of P given Q on uniform q bins, merged upward until
  // each group holds min_per_bin particles.
  const bool circle = model.space.axes.front().topology == Topology::circle;
  double lo = 0.0, hi = two_pi;
  if (!circle) {
    lo = INFINITY;
    hi = -INFINITY;
    for (std::size_t i = 0; i < N; ++i)
      if (!excl[i]) {
        lo = std::min(lo, a.q[i]);
        hi = std::max(hi, a.q[i]);
      }
    if (!(hi > lo)) hi = lo + 1.0;
  }
  const double w = (hi - lo) / bins;
  std::vector<int> bin_of(N, 0);
  std::vector<long> cnt(bins, 0);
  for (std::size_t i = 0; i < N; ++i) {
    if (excl[i]) continue;
    bin_of[i] = std::clamp(static_cast<int>((a.q[i] - lo) / w), 0, bins - 1);
    ++cnt[bin_of[i]];
  }
  std::vector<int> group(bins, 0);
  int g = 0;
  long acc = 0;
  for (int k = 0; k < bins; ++k) {
    group[k] = g;
    acc += cnt[k];
    if (acc >= min_per_bin) {
      ++g;
      acc = 0;
    }
  }
  int groups = g + (acc > 0 ? 1 : 0);
  if (acc > 0 && g > 0) {
    for (int k = 0; k < bins; ++k)
      if (group[k] == g) group[k] = g - 1;
    groups = g;
  }
  groups = std::max(groups, 1);
  r.merged_bins = bins - groups;
  std::vector<double> s1(groups, 0.0), s2(groups, 0.0), sn(groups, 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    if (excl[i]) continue;
    const int k = group[bin_of[i]];
    s1[k] += a.p[i];
    s2[k] += a.p[i] * a.p[i];
    sn[k] += 1.0;
  }
  double ch = 0.0, ct = 0.0, n_used = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    if (excl[i]) continue;
    const int k = group[bin_of[i]];
    const double ep = s1[k] / sn[k], epp = s2[k] / sn[k];
    const ParticleRates& x = ra[i];
    ch += 0.5 * x.D / x.M * (1.0 - model.beta * epp / x.M);
    ct += 0.5 * x.D / x.M - epp * x.F / (x.M * x.M) - ep * x.dV / x.M;
    n_used += 1.0;
  }
  r.conditional_H = ch / n_used;
  r.conditional_T = ct / n_used;
  return r;
}

EnergyAudit energy_balance_audit(const ModelSpec& model, Ensemble initial, const EnergyAuditConfig& config) {
  if (config.sample_every < 1 || config.steps / config.sample_every + 1 < 100)
    throw Error(ErrorKind::resolution, "energy audit needs at least 100 samples");
  EnergyAudit audit;
  Ensemble e = std::move(initial);
  const Ensemble first = e;
  const std::size_t N = e.count;
  std::vector<double> riemann(N, 0.0);  // per-particle left-point integral of L H
  auto record = [&](const Ensemble& s) {
    const MomentRow m = moment_row(model, s);
    audit.t.push_back(s.t);
    audit.EH.push_back(m.H.mean);
    audit.ET.push_back(m.T.mean);
    audit.EV.push_back(m.V.mean);
    audit.drift.push_back(m.drift);
    audit.max_energy_split_error =
        std::max(audit.max_energy_split_error, std::abs(m.H.mean - m.T.mean - m.V.mean));
  };
  record(e);
  Ensemble prev = e;
  for (long s = 1; s <= config.steps; ++s) {
    em_step(model, e, config.dt, config.threads);
    if (s % config.sample_every != 0) continue;
    record(e);
    EnergyInterval iv = energy_interval(model, prev, e, config.bins, config.min_per_bin);
    for (std::size_t i = 0; i < N; ++i)
      if (!prev.flagged[i]) riemann[i] += particle_rates(model, prev, i).LH * (e.t - prev.t);
    if (std::abs(iv.z_H) > 3.0) ++audit.intervals_beyond_3se;
    audit.intervals.push_back(iv);
    prev = e;
  }
  // Whole window: paired increments against the accumulated left-point drift.
  const double span = prev.t - first.t;
  std::vector<unsigned char> excl(N);
  std::vector<double> fd(N), th(N), d(N), fdt(N);
  for (std::size_t i = 0; i < N; ++i) {
    excl[i] = first.flagged[i] || prev.flagged[i];
    if (excl[i]) continue;
    const ParticleRates a = particle_rates(model, first, i), b = particle_rates(model, prev, i);
    fd[i] = (b.H - a.H) / span;
    th[i] = riemann[i] / span;
    d[i] = fd[i] - th[i];
    fdt[i] = (b.T - a.T) / span;
  }
  EnergyInterval& w = audit.whole;
  w = energy_interval(model, first, prev, config.bins, config.min_per_bin);
  w.fd_H = batch_mean(fd, excl);
  w.theory_H = batch_mean(th, excl);
  w.diff_H = batch_mean(d, excl);
  w.z_H = w.diff_H.se > 0.0 ? w.diff_H.mean / w.diff_H.se : 0.0;
  return audit;
}

}  // namespace klab
