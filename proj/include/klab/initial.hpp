#pragma once

#include "klab/equilibrium.hpp"
#include "klab/grid.hpp"
#include "klab/model.hpp"

#include <functional>
#include <span>

namespace klab {

// Bivariate normal density on the grid, wrapped over periodic images in q
// and normalized by the grid quadrature.
DensityField gaussian_density(const PhaseGrid& grid, double mean_q, double mean_p, double var_q, double var_p,
                              double cov_qp = 0.0);

// f = g0(q) N(p; mu(q), s T M(q)), normalized. g0 is given on the q nodes.
DensityField conditional_gaussian_state(const EquilibriumState& eq, const ModelSpec& model,
                                        std::span<const double> g0, const std::function<double(double)>& mu,
                                        double variance_scale = 1.0);

// Position density proportional to g*(1 + a cos q) on circles or g*(1 + a tanh q) on lines.
std::vector<double> tilted_position_density(const EquilibriumState& eq, double amplitude);

struct PhaseMoments {
  double mean_q = 0.0, mean_p = 0.0;
  double var_q = 0.0, var_p = 0.0, cov_qp = 0.0;
};

// Grid-quadrature mean and covariance of a density. On a circle q is taken
// as the node coordinate, so this is only meaningful for concentrated states.
PhaseMoments phase_moments(const DensityField& f);

}  // namespace klab
