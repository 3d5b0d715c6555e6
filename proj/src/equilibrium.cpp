#include "klab/equilibrium.hpp"

#include "klab/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace klab {

namespace {

double log_sum_exp(const std::vector<double>& x) {
  const double m = *std::max_element(x.begin(), x.end());
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

// log of exp(-beta V) sqrt(M) at each node.
std::vector<double> log_position_weight(const ModelSpec& model, const std::vector<double>& q) {
  std::vector<double> l(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    const auto c = model.family->eval1(q[i]);
    l[i] = -model.beta * c.V + 0.5 * std::log(c.M);
  }
  return l;
}

std::vector<double> quadrature_nodes(const Axis& a, int n) {
  std::vector<double> q(static_cast<std::size_t>(n));
  const double h = a.topology == Topology::circle ? two_pi / n : (a.hi - a.lo) / n;
  for (int i = 0; i < n; ++i)
    q[static_cast<std::size_t>(i)] = a.topology == Topology::circle ? i * h : a.lo + (i + 0.5) * h;
  return q;
}

void require_1d(const ModelSpec& model) {
  if (model.dim() != 1) throw Error(ErrorKind::grid, "grid-based equilibrium work is one-dimensional");
}

}  // namespace

PartitionResult partition_function(const ModelSpec& model, int initial_nodes) {
  require_1d(model);
  const Axis& a = model.space.axes[0];
  const double length = a.topology == Topology::circle ? two_pi : a.hi - a.lo;
  const double prefactor = 0.5 * std::log(two_pi * model.temperature());

  auto level = [&](int n, std::vector<double>* weights) {
    const auto q = quadrature_nodes(a, n);
    auto l = log_position_weight(model, q);
    if (weights) *weights = l;
    return prefactor + log_sum_exp(l) + std::log(length / n);
  };

  int n = std::max(initial_nodes, 16);
  double prev = level(n, nullptr);
  for (; n <= (1 << 20); n *= 2) {
    std::vector<double> l;
    const double cur = level(2 * n, &l);
    if (std::abs(cur - prev) < 1e-8) {
      if (a.topology == Topology::line) {
        // Surrogate for integrability: the integrand must have decayed at
        // the truncation bounds.
        const double lmax = *std::max_element(l.begin(), l.end());
        const std::size_t edge = std::max<std::size_t>(1, l.size() / 20);
        double tail = 0.0, all = 0.0;
        for (std::size_t i = 0; i < l.size(); ++i) {
          const double w = std::exp(l[i] - lmax);
          all += w;
          if (i < edge || i >= l.size() - edge) tail += w;
        }
        if (tail > 1e-8 * all) {
          std::ostringstream os;
          os << "exp(-beta V) sqrt(det M) carries relative mass " << tail / all
             << " near the line bounds; enlarge the bounds or check growth of V";
          throw Error(ErrorKind::integrability, os.str());
        }
      }
      return PartitionResult{std::exp(cur), cur, 2 * n};
    }
    prev = cur;
  }
  throw Error(ErrorKind::resolution, "partition-function quadrature did not converge");
}

std::pair<double, double> default_line_bounds(const Family& family, double beta, double tail) {
  if (family.dim() != 1) throw Error(ErrorKind::grid, "default bounds are one-dimensional");
  auto logw = [&](double q) {
    const auto c = family.eval1(q);
    return -beta * c.V + 0.5 * std::log(c.M);
  };
  // Find a half-width where the integrand is negligible, then shrink.
  double big = 1.0;
  while (big < 1e6 && (logw(big) > logw(0.0) - 80.0 || logw(-big) > logw(0.0) - 80.0)) big *= 2.0;
  const int n = 1 << 16;
  const double h = 2.0 * big / n;
  std::vector<double> q(n), l(n);
  for (int i = 0; i < n; ++i) {
    q[i] = -big + (i + 0.5) * h;
    l[i] = logw(q[i]);
  }
  const double m = *std::max_element(l.begin(), l.end());
  std::vector<double> w(n);
  double total = 0.0;
  for (int i = 0; i < n; ++i) total += (w[i] = std::exp(l[i] - m));
  // Grow the symmetric interval until the outside mass drops below tail.
  double outside = total;
  int k = n / 2;  // interval covers [q[n/2 - k], q[n/2 + k - 1]]
  for (k = 0; k < n / 2; ++k) {
    outside -= w[n / 2 - 1 - k] + w[n / 2 + k];
    if (outside <= tail * total) break;
  }
  const double L = (k + 1) * h;
  return {-L, L};
}

EquilibriumState build_equilibrium(const ModelSpec& model, const PhaseGrid& grid) {
  require_1d(model);
  EquilibriumState eq;
  eq.grid = grid;
  eq.beta = model.beta;
  const int nq = grid.nq(), np = grid.np();

  std::vector<double> qn(grid.q_nodes().begin(), grid.q_nodes().end());
  std::vector<double> lg = log_position_weight(model, qn);
  const double lz = log_sum_exp(lg) + std::log(grid.dq());
  eq.log_g.resize(static_cast<std::size_t>(nq));
  eq.g.resize(static_cast<std::size_t>(nq));
  for (int i = 0; i < nq; ++i) {
    eq.log_g[static_cast<std::size_t>(i)] = lg[static_cast<std::size_t>(i)] - lz;
    eq.g[static_cast<std::size_t>(i)] = std::exp(eq.log_g[static_cast<std::size_t>(i)]);
  }
  const double gmax = *std::max_element(eq.g.begin(), eq.g.end());
  if (gmax * grid.dq() > 0.25)
    throw Error(ErrorKind::temperature_too_low,
                "the equilibrium position density is not resolved by the q grid; rescale beta or refine");
  eq.log_Z = 0.5 * std::log(two_pi * model.temperature()) + lz;
  eq.Z = std::exp(eq.log_Z);

  eq.log_h.resize(grid.size());
  eq.h.resize(grid.size());
  eq.log_f.resize(grid.size());
  eq.f.resize(grid.size());
  std::vector<double> row(static_cast<std::size_t>(np));
  for (int i = 0; i < nq; ++i) {
    const double m = model.family->eval1(grid.q(i)).M;
    for (int j = 0; j < np; ++j) row[static_cast<std::size_t>(j)] = -0.5 * model.beta * grid.p(j) * grid.p(j) / m;
    const double lzh = log_sum_exp(row) + std::log(grid.dp());
    for (int j = 0; j < np; ++j) {
      const auto k = grid.index(i, j);
      eq.log_h[k] = row[static_cast<std::size_t>(j)] - lzh;
      eq.h[k] = std::exp(eq.log_h[k]);
      eq.log_f[k] = eq.log_g[static_cast<std::size_t>(i)] + eq.log_h[k];
      eq.f[k] = std::exp(eq.log_f[k]);
    }
  }
  return eq;
}

ConditionalMoments conditional_equilibrium_moments(const EquilibriumState& eq, const ModelSpec& model, int i) {
  const auto& gr = eq.grid;
  if (i < 0 || i >= gr.nq()) throw Error(ErrorKind::grid, "q index outside the grid");
  const double m = model.family->eval1(gr.q(i)).M;
  const double sigma = std::sqrt(model.temperature() * m);
  const double tail = std::erfc(gr.p_axis().hi / (std::sqrt(2.0) * sigma));
  if (tail > 1e-10) {
    std::ostringstream os;
    os << "Gaussian tail mass " << tail << " beyond p_max at q-node " << i;
    throw Error(ErrorKind::truncation, os.str());
  }
  ConditionalMoments r;
  double s1 = 0.0, s2 = 0.0;
  for (int j = 0; j < gr.np(); ++j) {
    const double w = eq.h[gr.index(i, j)] * gr.dp();
    s1 += w * gr.p(j);
  }
  r.mean = s1;
  for (int j = 0; j < gr.np(); ++j) {
    const double d = gr.p(j) - s1;
    s2 += eq.h[gr.index(i, j)] * gr.dp() * d * d;
  }
  r.cov = s2;
  return r;
}

namespace {

struct ScanMin {
  double q;
  double value;
};

// Local minima of w over a uniform scan, each polished by Newton steps on
// the supplied derivatives (or a parabola through the neighbours).
template <class W, class Polish>
std::vector<ScanMin> scan_minima(const Axis& a, int n, W&& w, Polish&& polish) {
  const bool circle = a.topology == Topology::circle;
  const auto q = quadrature_nodes(a, n);
  std::vector<double> v(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) v[i] = w(q[i]);
  std::vector<ScanMin> out;
  const int m = static_cast<int>(q.size());
  for (int i = 0; i < m; ++i) {
    const int il = circle ? (i - 1 + m) % m : i - 1;
    const int ir = circle ? (i + 1) % m : i + 1;
    const double left = il >= 0 ? v[static_cast<std::size_t>(il)] : std::numeric_limits<double>::infinity();
    const double right = ir < m ? v[static_cast<std::size_t>(ir)] : std::numeric_limits<double>::infinity();
    const double c = v[static_cast<std::size_t>(i)];
    if (c <= left && c < right) {
      const double h = q[1] - q[0];
      double qs = polish(q[static_cast<std::size_t>(i)], left, c, right, h);
      if (circle) {
        qs = std::fmod(qs, two_pi);
        if (qs < 0) qs += two_pi;
      }
      out.push_back({qs, w(qs)});
    }
  }
  return out;
}

double parabola_vertex(double q, double left, double c, double right, double h) {
  if (!std::isfinite(left) || !std::isfinite(right)) return q;
  const double den = left - 2.0 * c + right;
  if (!(den > 0.0)) return q;
  return q + 0.5 * h * (left - right) / den;
}

}  // namespace

LaplaceReport laplace_partition(const ModelSpec& model, const PhaseGrid* grid, int scan_nodes) {
  require_1d(model);
  const Axis& a = model.space.axes[0];
  const auto& fam = *model.family;
  auto minima = scan_minima(
      a, scan_nodes, [&](double q) { return fam.eval1(q).V; },
      [&](double q0, double, double, double, double) {
        double q = q0;
        for (int it = 0; it < 3; ++it) {
          const auto c = fam.eval1(q);
          if (!(c.d2V > 0.0)) break;
          q -= c.dV / c.d2V;
        }
        return q;
      });
  if (minima.empty()) throw Error(ErrorKind::non_unique_minimum, "no interior minimum of V found");
  auto best = std::min_element(minima.begin(), minima.end(),
                               [](const ScanMin& x, const ScanMin& y) { return x.value < y.value; });
  int ties = 0;
  for (const auto& m : minima)
    if (std::abs(m.value - best->value) < 1e-9 && std::abs(m.q - best->q) > 1e-6) ++ties;
  if (ties > 0) throw Error(ErrorKind::non_unique_minimum, "V has several global minimizers");

  LaplaceReport r;
  r.q_star = best->q;
  const auto c = fam.eval1(r.q_star);
  r.K = c.d2V;
  if (!(r.K > 0.0)) throw Error(ErrorKind::degenerate_hessian, "V''(q*) is not positive");
  const double T = model.temperature();
  r.Z = partition_function(model).Z;
  r.Z_laplace = two_pi * T * std::exp(-model.beta * c.V) * std::sqrt(c.M / r.K);
  r.ratio = r.Z / r.Z_laplace;
  if (grid) {
    r.g_hat.resize(static_cast<std::size_t>(grid->nq()));
    for (int i = 0; i < grid->nq(); ++i) {
      double d = grid->q(i) - r.q_star;
      if (grid->periodic_q()) d = std::remainder(d, two_pi);
      r.g_hat[static_cast<std::size_t>(i)] =
          std::sqrt(r.K / (two_pi * T)) * std::exp(-0.5 * model.beta * r.K * d * d);
    }
  }
  return r;
}

std::vector<double> position_pdf_maxima(const ModelSpec& model, int scan_nodes) {
  require_1d(model);
  const Axis& a = model.space.axes[0];
  const double T = model.temperature();
  auto w = [&](double q) {
    const auto c = model.family->eval1(q);
    return c.V - 0.5 * T * std::log(c.M);
  };
  auto minima = scan_minima(a, scan_nodes, w, parabola_vertex);
  std::vector<double> out;
  if (minima.empty()) return out;
  double best = minima.front().value;
  for (const auto& m : minima) best = std::min(best, m.value);
  for (const auto& m : minima)
    if (m.value - best <= 1e-12 * std::max(1.0, std::abs(best))) out.push_back(m.q);
  return out;
}

double free_energy(const DensityField& f, const ModelSpec& model) {
  const auto& gr = f.grid;
  const double T = model.temperature();
  double s = 0.0;
  for (int i = 0; i < gr.nq(); ++i) {
    const auto c = model.family->eval1(gr.q(i));
    for (int j = 0; j < gr.np(); ++j) {
      const double v = f(i, j);
      if (v < 1e-300) continue;
      const double H = c.V + 0.5 * gr.p(j) * gr.p(j) / c.M;
      s += v * (H + T * std::log(v));
    }
  }
  return s * gr.cell();
}

}  // namespace klab
