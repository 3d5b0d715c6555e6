#pragma once

#include "klab/grid.hpp"
#include "klab/model.hpp"

#include <utility>
#include <vector>

namespace klab {

struct EquilibriumState {
  PhaseGrid grid;
  double beta = 1.0;
  double Z = 0.0;      // quadrature value on the q grid
  double log_Z = 0.0;
  std::vector<double> g, log_g;  // on q nodes
  std::vector<double> h, log_h;  // on (q, p) nodes
  std::vector<double> f, log_f;  // f = g h

  DensityField density() const { return DensityField{grid, f, 0.0}; }
};

struct PartitionResult {
  double Z = 0.0;
  double log_Z = 0.0;
  int nodes = 0;  // quadrature nodes at convergence
};

// Z = (2 pi T)^{1/2} int exp(-beta V) sqrt(M) dq for n = 1, by the midpoint
// (line) or trapezoid (circle) rule, doubled until two levels agree to 1e-8.
PartitionResult partition_function(const ModelSpec& model, int initial_nodes = 64);

// Symmetric line interval whose complement carries < tail of the equilibrium
// position mass (default 1e-12). Requires an analytic family.
std::pair<double, double> default_line_bounds(const Family& family, double beta, double tail = 1e-12);

EquilibriumState build_equilibrium(const ModelSpec& model, const PhaseGrid& grid);

struct ConditionalMoments {
  double mean = 0.0;
  double cov = 0.0;
};
ConditionalMoments conditional_equilibrium_moments(const EquilibriumState& eq, const ModelSpec& model, int i);

struct LaplaceReport {
  double q_star = 0.0;
  double K = 0.0;
  double Z = 0.0;
  double Z_laplace = 0.0;
  double ratio = 0.0;
  std::vector<double> g_hat;  // on grid q nodes when a grid is supplied
};
LaplaceReport laplace_partition(const ModelSpec& model, const PhaseGrid* grid = nullptr, int scan_nodes = 4096);

// Argmin of V - (T/2) ln M over a scan grid, refined by a local parabola.
std::vector<double> position_pdf_maxima(const ModelSpec& model, int scan_nodes = 4096);

// Discrete free energy sum f (H + T ln f) dq dp with 0 ln 0 = 0.
double free_energy(const DensityField& f, const ModelSpec& model);

}  // namespace klab
