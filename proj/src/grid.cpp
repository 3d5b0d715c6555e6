#include "klab/grid.hpp"

#include "klab/error.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace klab {

std::vector<double> GridAxis::nodes() const {
  std::vector<double> r(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) r[static_cast<std::size_t>(i)] = node(i);
  return r;
}

PhaseGrid::PhaseGrid(GridAxis q, GridAxis p) : q_(q), p_(p) {
  if (q_.n < 16 || p_.n < 16) throw Error(ErrorKind::grid, "at least 16 nodes per axis are required");
  if (!(q_.hi > q_.lo) || !(p_.hi > p_.lo)) throw Error(ErrorKind::grid, "empty axis range");
  if (p_.boundary == Boundary::periodic) throw Error(ErrorKind::grid, "the momentum axis cannot be periodic");
  dq_ = q_.spacing();
  dp_ = p_.spacing();
  qn_ = q_.nodes();
  pn_ = p_.nodes();
}

double default_p_max(const ModelSpec& model, int samples) {
  if (model.dim() != 1) throw Error(ErrorKind::grid, "phase grids are one-dimensional");
  double mmax = 0.0;
  for (const auto& q : sample_nodes(model.space, samples)) mmax = std::max(mmax, model.family->eval1(q[0]).M);
  return 7.0 * std::sqrt(model.temperature() * mmax);
}

PhaseGrid PhaseGrid::for_model(const ModelSpec& model, int nq, int np, double p_max) {
  const double floor = default_p_max(model);
  if (p_max <= 0.0) {
    p_max = floor;
  } else if (p_max < floor * (1.0 - 1e-12)) {
    std::ostringstream os;
    os << "p_max = " << p_max << " is below 7 sqrt(T max M) = " << floor;
    throw Error(ErrorKind::grid, os.str());
  }
  const auto& a = model.space.axes.at(0);
  GridAxis q;
  q.n = nq;
  if (a.topology == Topology::circle) {
    q.lo = 0.0;
    q.hi = two_pi;
    q.boundary = Boundary::periodic;
  } else {
    q.lo = a.lo;
    q.hi = a.hi;
    q.boundary = Boundary::dirichlet_zero;
  }
  GridAxis p{np, -p_max, p_max, Boundary::dirichlet_zero};
  return PhaseGrid(q, p);
}

bool PhaseGrid::symmetric_p() const {
  for (int j = 0; j < p_.n; ++j)
    if (std::abs(p(j) + p(p_.n - 1 - j)) > 1e-12 * std::max(1.0, std::abs(p(j)))) return false;
  return true;
}

bool PhaseGrid::operator==(const PhaseGrid& o) const {
  return q_.n == o.q_.n && p_.n == o.p_.n && q_.lo == o.q_.lo && q_.hi == o.q_.hi && p_.lo == o.p_.lo &&
         p_.hi == o.p_.hi && q_.boundary == o.q_.boundary && p_.boundary == o.p_.boundary;
}

double integrate(const PhaseGrid& grid, std::span<const double> field) {
  double s = 0.0;
  for (double v : field) s += v;
  return s * grid.cell();
}

double integrate_q(const PhaseGrid& grid, std::span<const double> field_q) {
  double s = 0.0;
  for (double v : field_q) s += v;
  return s * grid.dq();
}

double total_mass(const DensityField& f) { return integrate(f.grid, f.values); }

void normalize(DensityField& f) {
  const double m = total_mass(f);
  if (!(m > 0.0) || !std::isfinite(m)) throw Error(ErrorKind::positivity, "cannot normalize a field with mass <= 0");
  for (double& v : f.values) v /= m;
}

MarginalField marginalize_position(const DensityField& f) {
  const auto& gr = f.grid;
  MarginalField g;
  g.values.assign(static_cast<std::size_t>(gr.nq()), 0.0);
  for (int i = 0; i < gr.nq(); ++i) {
    double s = 0.0;
    for (int j = 0; j < gr.np(); ++j) s += f(i, j);
    g.values[static_cast<std::size_t>(i)] = s * gr.dp();
  }
  return g;
}

ConditionalField conditional_pdf(const DensityField& f, const MarginalField& g) {
  const auto& gr = f.grid;
  const double gmax = *std::max_element(g.values.begin(), g.values.end());
  const double floor = 1e-13 * gmax;
  std::vector<int> bad;
  for (int i = 0; i < gr.nq(); ++i)
    if (!(g.values[static_cast<std::size_t>(i)] > floor)) bad.push_back(i);
  if (!bad.empty()) {
    std::ostringstream os;
    os << "g below floor at " << bad.size() << " q-node(s):";
    for (std::size_t k = 0; k < std::min<std::size_t>(bad.size(), 10); ++k) os << ' ' << bad[k];
    if (bad.size() > 10) os << " ...";
    throw Error(ErrorKind::positivity, os.str());
  }
  ConditionalField h;
  h.values.resize(gr.size());
  h.normalization.resize(static_cast<std::size_t>(gr.nq()));
  for (int i = 0; i < gr.nq(); ++i) {
    const double gi = g.values[static_cast<std::size_t>(i)];
    double s = 0.0;
    for (int j = 0; j < gr.np(); ++j) {
      const double v = f(i, j) / gi;
      h.values[gr.index(i, j)] = v;
      s += v;
    }
    h.normalization[static_cast<std::size_t>(i)] = s * gr.dp();
  }
  return h;
}

ConditionalMeanField conditional_mean(const PhaseGrid& grid, const ConditionalField& h) {
  ConditionalMeanField m;
  m.gamma.resize(static_cast<std::size_t>(grid.nq()));
  m.varpi.resize(grid.size());
  for (int i = 0; i < grid.nq(); ++i) {
    double s = 0.0;
    for (int j = 0; j < grid.np(); ++j) s += h.values[grid.index(i, j)] * grid.p(j);
    const double gam = s * grid.dp();
    m.gamma[static_cast<std::size_t>(i)] = gam;
    for (int j = 0; j < grid.np(); ++j) m.varpi[grid.index(i, j)] = grid.p(j) - gam;
  }
  return m;
}

ParitySplit parity_split(const PhaseGrid& grid, std::span<const double> h) {
  if (!grid.symmetric_p()) throw Error(ErrorKind::grid, "parity split needs a momentum grid symmetric about 0");
  ParitySplit s;
  s.plus.resize(grid.size());
  s.minus.resize(grid.size());
  const int np = grid.np();
  for (int i = 0; i < grid.nq(); ++i)
    for (int j = 0; j < np; ++j) {
      const double a = h[grid.index(i, j)];
      const double b = h[grid.index(i, np - 1 - j)];
      s.plus[grid.index(i, j)] = 0.5 * (a + b);
      s.minus[grid.index(i, j)] = 0.5 * (a - b);
    }
  return s;
}

MomentumMarginals momentum_marginals(const DensityField& f, const MarginalField& g,
                                     std::span<const double> h_star) {
  const auto& gr = f.grid;
  MomentumMarginals m;
  m.rho.assign(static_cast<std::size_t>(gr.np()), 0.0);
  m.rho_hat.assign(static_cast<std::size_t>(gr.np()), 0.0);
  for (int i = 0; i < gr.nq(); ++i) {
    const double gi = g.values[static_cast<std::size_t>(i)];
    for (int j = 0; j < gr.np(); ++j) {
      m.rho[static_cast<std::size_t>(j)] += f(i, j) * gr.dq();
      m.rho_hat[static_cast<std::size_t>(j)] += gi * h_star[gr.index(i, j)] * gr.dq();
    }
  }
  return m;
}

namespace {

// 1D stencil on a strided line of n values.
void diff_line(const double* in, double* out, int n, std::ptrdiff_t stride, double h, bool periodic, int order) {
  auto at = [&](int k) { return in[k * stride]; };
  if (order == 1) {
    const double c = 1.0 / (2.0 * h);
    for (int k = 1; k < n - 1; ++k) out[k * stride] = (at(k + 1) - at(k - 1)) * c;
    if (periodic) {
      out[0] = (at(1) - at(n - 1)) * c;
      out[(n - 1) * stride] = (at(0) - at(n - 2)) * c;
    } else {
      out[0] = (-3.0 * at(0) + 4.0 * at(1) - at(2)) * c;
      out[(n - 1) * stride] = (3.0 * at(n - 1) - 4.0 * at(n - 2) + at(n - 3)) * c;
    }
  } else {
    const double c = 1.0 / (h * h);
    for (int k = 1; k < n - 1; ++k) out[k * stride] = (at(k + 1) - 2.0 * at(k) + at(k - 1)) * c;
    if (periodic) {
      out[0] = (at(1) - 2.0 * at(0) + at(n - 1)) * c;
      out[(n - 1) * stride] = (at(0) - 2.0 * at(n - 1) + at(n - 2)) * c;
    } else {
      out[0] = (2.0 * at(0) - 5.0 * at(1) + 4.0 * at(2) - at(3)) * c;
      out[(n - 1) * stride] = (2.0 * at(n - 1) - 5.0 * at(n - 2) + 4.0 * at(n - 3) - at(n - 4)) * c;
    }
  }
}

void check_order(int order, int n) {
  if (order != 1 && order != 2) throw Error(ErrorKind::grid, "derivative order must be 1 or 2");
  if (n < 5) throw Error(ErrorKind::grid, "fewer than 5 nodes on the differentiation axis");
}

}  // namespace

std::vector<double> spatial_derivative(const PhaseGrid& grid, std::span<const double> field, Direction axis,
                                       int order) {
  if (field.size() != grid.size()) throw Error(ErrorKind::grid, "field size does not match the grid");
  std::vector<double> out(grid.size());
  if (axis == Direction::q) {
    check_order(order, grid.nq());
    for (int j = 0; j < grid.np(); ++j)
      diff_line(field.data() + j, out.data() + j, grid.nq(), grid.np(), grid.dq(), grid.periodic_q(), order);
  } else {
    check_order(order, grid.np());
    for (int i = 0; i < grid.nq(); ++i)
      diff_line(field.data() + grid.index(i, 0), out.data() + grid.index(i, 0), grid.np(), 1, grid.dp(), false,
                order);
  }
  return out;
}

std::vector<double> derivative_q(const PhaseGrid& grid, std::span<const double> field_q, int order) {
  if (field_q.size() != static_cast<std::size_t>(grid.nq()))
    throw Error(ErrorKind::grid, "q-field size does not match the grid");
  check_order(order, grid.nq());
  std::vector<double> out(field_q.size());
  diff_line(field_q.data(), out.data(), grid.nq(), 1, grid.dq(), grid.periodic_q(), order);
  return out;
}

double boundary_mass(const DensityField& f) {
  const auto& gr = f.grid;
  double edge = 0.0, total = 0.0;
  for (int i = 0; i < gr.nq(); ++i)
    for (int j = 0; j < gr.np(); ++j) {
      const double v = std::abs(f(i, j));
      total += v;
      const bool on_edge = j == 0 || j == gr.np() - 1 || (!gr.periodic_q() && (i == 0 || i == gr.nq() - 1));
      if (on_edge) edge += v;
    }
  return total > 0 ? edge / total : 0.0;
}

}  // namespace klab
