#include "klab/initial.hpp"

#include "klab/error.hpp"

#include <cmath>

namespace klab {

DensityField gaussian_density(const PhaseGrid& grid, double mean_q, double mean_p, double var_q, double var_p,
                              double cov_qp) {
  const double det = var_q * var_p - cov_qp * cov_qp;
  if (!(var_q > 0.0) || !(var_p > 0.0) || !(det > 0.0))
    throw Error(ErrorKind::invalid_model, "gaussian_density needs a positive definite covariance");
  DensityField f{grid, std::vector<double>(grid.size(), 0.0), 0.0};
  const int images = grid.periodic_q() ? static_cast<int>(std::ceil(8.0 * std::sqrt(var_q) / two_pi)) + 1 : 0;
  for (int i = 0; i < grid.nq(); ++i)
    for (int j = 0; j < grid.np(); ++j) {
      double s = 0.0;
      for (int k = -images; k <= images; ++k) {
        const double dq = grid.q(i) + k * two_pi - mean_q;
        const double dp = grid.p(j) - mean_p;
        s += std::exp(-0.5 * (var_p * dq * dq - 2.0 * cov_qp * dq * dp + var_q * dp * dp) / det);
      }
      f(i, j) = s;
    }
  normalize(f);
  return f;
}

DensityField conditional_gaussian_state(const EquilibriumState& eq, const ModelSpec& model,
                                        std::span<const double> g0, const std::function<double(double)>& mu,
                                        double variance_scale) {
  const PhaseGrid& grid = eq.grid;
  if (g0.size() != static_cast<std::size_t>(grid.nq())) throw Error(ErrorKind::grid, "g0 has the wrong size");
  if (!(variance_scale > 0.0)) throw Error(ErrorKind::invalid_model, "variance scale must be positive");
  DensityField f{grid, std::vector<double>(grid.size(), 0.0), 0.0};
  for (int i = 0; i < grid.nq(); ++i) {
    const double q = grid.q(i);
    const double var = variance_scale * model.temperature() * model.family->eval1(q).M;
    const double m = mu ? mu(q) : 0.0;
    double norm = 0.0;
    for (int j = 0; j < grid.np(); ++j) {
      const double d = grid.p(j) - m;
      f(i, j) = std::exp(-0.5 * d * d / var);
      norm += f(i, j);
    }
    norm *= grid.dp();
    for (int j = 0; j < grid.np(); ++j) f(i, j) *= g0[i] / norm;
  }
  normalize(f);
  return f;
}

std::vector<double> tilted_position_density(const EquilibriumState& eq, double amplitude) {
  const PhaseGrid& grid = eq.grid;
  std::vector<double> g(grid.nq());
  double s = 0.0;
  for (int i = 0; i < grid.nq(); ++i) {
    const double q = grid.q(i);
    g[i] = eq.g[i] * (1.0 + amplitude * (grid.periodic_q() ? std::cos(q) : std::tanh(q)));
    if (!(g[i] > 0.0)) throw Error(ErrorKind::positivity, "tilt makes the position density non-positive");
    s += g[i];
  }
  for (double& v : g) v /= s * grid.dq();
  return g;
}

PhaseMoments phase_moments(const DensityField& f) {
  const PhaseGrid& grid = f.grid;
  double m0 = 0.0, mq = 0.0, mp = 0.0;
  for (int i = 0; i < grid.nq(); ++i)
    for (int j = 0; j < grid.np(); ++j) {
      m0 += f(i, j);
      mq += f(i, j) * grid.q(i);
      mp += f(i, j) * grid.p(j);
    }
  if (!(m0 > 0.0)) throw Error(ErrorKind::positivity, "density has no mass");
  PhaseMoments m;
  m.mean_q = mq / m0;
  m.mean_p = mp / m0;
  for (int i = 0; i < grid.nq(); ++i)
    for (int j = 0; j < grid.np(); ++j) {
      const double dq = grid.q(i) - m.mean_q, dp = grid.p(j) - m.mean_p;
      m.var_q += f(i, j) * dq * dq;
      m.var_p += f(i, j) * dp * dp;
      m.cov_qp += f(i, j) * dq * dp;
    }
  m.var_q /= m0;
  m.var_p /= m0;
  m.cov_qp /= m0;
  return m;
}

}  // namespace klab
