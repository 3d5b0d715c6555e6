#pragma once

#include "klab/model.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace klab {

enum class Boundary { periodic, dirichlet_zero };

struct GridAxis {
  int n = 0;
  double lo = 0.0;
  double hi = 0.0;
  Boundary boundary = Boundary::dirichlet_zero;

  double spacing() const { return (hi - lo) / n; }
  // Periodic axes put nodes at lo + i h; the others are cell-centered.
  double node(int i) const {
    return boundary == Boundary::periodic ? lo + i * spacing() : lo + (i + 0.5) * spacing();
  }
  std::vector<double> nodes() const;
};

// Tensor-product q x p grid for one degree of freedom. Fields are stored
// row-major: index i * np + j with i over q and j over p.
class PhaseGrid {
 public:
  PhaseGrid() = default;
  PhaseGrid(GridAxis q, GridAxis p);

  // Grid for a one-dimensional model. p_max <= 0 selects the default
  // 7 sqrt(T max M) policy; line bounds are taken from model.space.
  static PhaseGrid for_model(const ModelSpec& model, int nq, int np, double p_max = 0.0);

  const GridAxis& q_axis() const { return q_; }
  const GridAxis& p_axis() const { return p_; }
  int nq() const { return q_.n; }
  int np() const { return p_.n; }
  std::size_t size() const { return static_cast<std::size_t>(q_.n) * static_cast<std::size_t>(p_.n); }
  double dq() const { return dq_; }
  double dp() const { return dp_; }
  double cell() const { return dq_ * dp_; }
  double q(int i) const { return qn_[static_cast<std::size_t>(i)]; }
  double p(int j) const { return pn_[static_cast<std::size_t>(j)]; }
  std::span<const double> q_nodes() const { return qn_; }
  std::span<const double> p_nodes() const { return pn_; }
  std::size_t index(int i, int j) const {
    return static_cast<std::size_t>(i) * static_cast<std::size_t>(p_.n) + static_cast<std::size_t>(j);
  }
  bool periodic_q() const { return q_.boundary == Boundary::periodic; }
  bool symmetric_p() const;

  bool operator==(const PhaseGrid& o) const;

 private:
  GridAxis q_, p_;
  double dq_ = 0, dp_ = 0;
  std::vector<double> qn_, pn_;
};

// Default momentum half-width 7 sqrt(T max_q M(q)) for n = 1.
double default_p_max(const ModelSpec& model, int samples = 512);

struct DensityField {
  PhaseGrid grid;
  std::vector<double> values;
  double t = 0.0;

  double& operator()(int i, int j) { return values[grid.index(i, j)]; }
  double operator()(int i, int j) const { return values[grid.index(i, j)]; }
};

struct MarginalField {
  std::vector<double> values;  // on q nodes
};

struct ConditionalField {
  std::vector<double> values;         // h[i, j]
  std::vector<double> normalization;  // per-q integral of h dp
};

struct ConditionalMeanField {
  std::vector<double> gamma;   // per q node
  std::vector<double> varpi;   // p_j - gamma_i
};

struct ParitySplit {
  std::vector<double> plus;
  std::vector<double> minus;
};

struct MomentumMarginals {
  std::vector<double> rho;
  std::vector<double> rho_hat;
};

// Floor bookkeeping for log and ratio evaluations.
struct FloorDiagnostics {
  std::size_t floored = 0;
  std::vector<std::size_t> nodes;
};

// Quadrature.
double integrate(const PhaseGrid& grid, std::span<const double> field);
double integrate_q(const PhaseGrid& grid, std::span<const double> field_q);
double total_mass(const DensityField& f);
void normalize(DensityField& f);

MarginalField marginalize_position(const DensityField& f);
// Throws a positivity error naming nodes where g < 1e-13 max g.
ConditionalField conditional_pdf(const DensityField& f, const MarginalField& g);
ConditionalMeanField conditional_mean(const PhaseGrid& grid, const ConditionalField& h);
ParitySplit parity_split(const PhaseGrid& grid, std::span<const double> h);
// rho(p) = int f dq and rho_hat(p) = int g h_* dq.
MomentumMarginals momentum_marginals(const DensityField& f, const MarginalField& g,
                                     std::span<const double> h_star);

enum class Direction { q, p };

// Second-order central stencils, periodic wrap on periodic axes and one-sided
// second-order stencils at the ends of the other axes.
std::vector<double> spatial_derivative(const PhaseGrid& grid, std::span<const double> field, Direction axis,
                                       int order);
// Same stencils for a field that lives on the q nodes only.
std::vector<double> derivative_q(const PhaseGrid& grid, std::span<const double> field_q, int order);

// Mass in the outermost momentum cells relative to the total mass.
double boundary_mass(const DensityField& f);

}  // namespace klab
