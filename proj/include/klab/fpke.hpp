#pragma once

#include "klab/equilibrium.hpp"
#include "klab/grid.hpp"
#include "klab/model.hpp"

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace klab {

// Scaling knobs for diagnostics. damping_scale multiplies the Einstein
// damping beta D / 2; evolution runs require it to be 1.
struct FpkeOptions {
  double diffusion_scale = 1.0;
  double damping_scale = 1.0;
};

// Discretized generator and its adjoint on a phase grid (n = 1).
class FokkerPlanck {
 public:
  FokkerPlanck(const ModelSpec& model, const PhaseGrid& grid, FpkeOptions options = {});

  const PhaseGrid& grid() const { return grid_; }
  const ModelSpec& model() const { return model_; }
  const FpkeOptions& options() const { return options_; }

  // Conservative flux form: -d_q(a f) + d_p(b f) + (D/2) d_p^2 f with zero
  // flux through non-periodic boundaries.
  void apply_adjoint(std::span<const double> f, std::span<double> out) const;
  std::vector<double> apply_adjoint(std::span<const double> f) const;
  // Expanded form {H,f} + p F/M d_p f + (F/M) f + (D/2) d_p^2 f with the
  // central stencils of spatial_derivative; kept as a cross-check.
  std::vector<double> apply_adjoint_expanded(std::span<const double> f) const;
  // L phi = {phi, H} - p F/M d_p phi + (D/2) d_p^2 phi.
  std::vector<double> apply_generator(std::span<const double> phi) const;

  // dt <= min(0.4 dp^2 / max D, 0.4 / (max|a|/dq + max|b|/dp)).
  double stable_dt(double safety = 0.4) const;

  // Coefficients on the grid.
  std::span<const double> velocity() const { return a_; }      // p / M
  std::span<const double> momentum_drift() const { return b_; } // d_q H + F p / M
  std::span<const double> dqH() const { return dqh_; }
  std::span<const double> mass() const { return m_; }          // on q nodes
  std::span<const double> diffusion() const { return d_; }     // on q nodes
  std::span<const double> damping() const { return fdamp_; }   // on q nodes

 private:
  ModelSpec model_;
  PhaseGrid grid_;
  FpkeOptions options_;
  std::vector<double> a_, b_, dqh_;
  std::vector<double> m_, d_, fdamp_;
};

struct ResidualNorms {
  double max_abs = 0.0;
  double l2 = 0.0;  // quadrature L2 norm
};

ResidualNorms stationarity_residual(const FokkerPlanck& fp, const EquilibriumState& eq);

struct StationarityStudy {
  ResidualNorms coarse;
  ResidualNorms fine;
  double ratio = 0.0;           // coarse.max_abs / fine.max_abs
  double order_estimate = 0.0;  // log2(ratio)
};

// Residual of f* on nq x np and 2nq x 2np grids with the same extents.
// With require_order, an order estimate below 1.5 raises a
// discretization-defect error.
StationarityStudy stationarity_refinement(const ModelSpec& model, int nq, int np, double p_max = 0.0,
                                          FpkeOptions options = {}, bool require_order = true);

struct EvolutionRun {
  DensityField initial;
  double dt = 0.0;  // <= 0 selects stable_dt()
  double t_end = 0.0;
  int snapshot_every = 1;
};

struct StepDiagnostics {
  long step = 0;
  double t = 0.0;
  double mass = 0.0;
  double min_f = 0.0;
  double boundary_mass = 0.0;
};

struct EvolutionResult {
  double dt = 0.0;  // resolved step
  long steps = 0;
  std::vector<DensityField> snapshots;
  std::vector<StepDiagnostics> diagnostics;  // one per snapshot
  double max_step_mass_drift = 0.0;
  double total_mass_drift = 0.0;
  bool boundary_warning = false;
  bool aborted = false;
  std::string abort_reason;
  DensityField final_state;  // last good state
};

using Observer = std::function<void(const DensityField&, const StepDiagnostics&)>;

// Classical RK4 on the method-of-lines system. Snapshots (including t = 0
// and the final state) are handed to the observer and kept when requested.
EvolutionResult evolve(const FokkerPlanck& fp, const EvolutionRun& run, const Observer& observer = {},
                       bool keep_snapshots = true);

// Single RK4 step, in place.
void rk4_step(const FokkerPlanck& fp, std::vector<double>& f, double dt);

struct PositionResidual {
  std::vector<double> r;
  ResidualNorms norms;
};
// (g_after - g_before)/dt + d_q(g gamma / M) at the midpoint state.
PositionResidual position_pde_residual(const FokkerPlanck& fp, const DensityField& before,
                                       const DensityField& after, double dt);

struct ConditionalResidual {
  std::vector<double> r;        // dh/dt - rhs at the midpoint
  std::vector<double> rhs;      // direct right-hand side
  std::vector<double> dh_dt;    // measured
  ResidualNorms norms;
  double parity_agreement = 0.0;  // max |A/B form - direct form| / max |direct|
  std::size_t floored = 0;
};
ConditionalResidual conditional_pde_residual(const FokkerPlanck& fp, const DensityField& before,
                                             const DensityField& after, double dt);

// Right-hand side of the conditional PDE at a state, in direct and parity
// block form.
struct ConditionalRhs {
  std::vector<double> direct;
  std::vector<double> parity;  // top + bottom rows of the block form
  std::vector<double> parity_top;
  std::vector<double> parity_bottom;
  std::vector<double> h;
  std::vector<double> g;
  std::size_t floored = 0;
};
ConditionalRhs conditional_rhs(const FokkerPlanck& fp, const DensityField& f);

}  // namespace klab
