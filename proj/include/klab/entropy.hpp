#pragma once

#include "klab/equilibrium.hpp"
#include "klab/fpke.hpp"
#include "klab/grid.hpp"
#include "klab/model.hpp"

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace klab {

// theta = ln(f/f*), xi = ln(g/g*), eta = ln(h/h*). Nodes with f <= 1e-300
// are masked and carry zero in every field.
struct LogRatioFields {
  std::vector<double> theta;
  std::vector<double> xi;  // on q nodes
  std::vector<double> eta;
  std::vector<unsigned char> masked;
  std::size_t floored = 0;
  double split_error = 0.0;  // max |theta - xi - eta| over unmasked nodes
  MarginalField g;
  ConditionalField h;
};

// strict: more than 0.1% masked nodes raises a positivity error.
LogRatioFields log_ratio_fields(const DensityField& f, const EquilibriumState& eq, bool strict = false);

struct EntropyReport {
  double t = 0.0;
  double F = 0.0, G = 0.0, H = 0.0;
  double split_residual = 0.0;  // F - G - H
  double dissipation = 0.0;     // -1/2 E |d_p eta|_D^2
  double G_dot = 0.0;           // E(gamma M^-1 d_q xi)
  double tv = 0.0;              // 1/2 |f - f*|_1
  double tv_bound = 0.0;        // sqrt(F / 2)
  double g_l1 = 0.0;            // |g - g*|_1
  double g_bound = 0.0;         // sqrt(2 G)
  double rho_l1 = 0.0;          // |rho - rho_hat|_1
  double rho_bound = 0.0;       // sqrt(2 H)
  std::size_t floored = 0;

  // Equality at zero is judged up to quadrature roundoff.
  static constexpr double roundoff = 1e-14;
  bool pinsker_holds() const {
    return tv <= tv_bound + roundoff && g_l1 <= g_bound + roundoff && rho_l1 <= rho_bound + roundoff;
  }
};

// Entropy triple and bounds. Entropies below -1e-10 raise a
// quadrature-defect error.
EntropyReport entropies(const DensityField& f, const EquilibriumState& eq, const ModelSpec& model);
EntropyReport entropies(const DensityField& f, const EquilibriumState& eq, const ModelSpec& model,
                        const LogRatioFields& lr);

// F, G, H = F - G and the three L1 distances of the Pinsker-type bounds.
// Needs no conditional density, so it also covers states whose position
// marginal underflows somewhere on the grid.
EntropyReport pinsker_report(const DensityField& f, const EquilibriumState& eq);

double dissipation_rate(const DensityField& f, const EquilibriumState& eq, const ModelSpec& model);
double dissipation_rate(const DensityField& f, const ModelSpec& model, const LogRatioFields& lr);

struct PositionEntropyDerivatives {
  double G_dot = 0.0;
  double G_ddot = 0.0;
  double transport_term = 0.0;  // E(d_q xi M^-1 P d_t eta)
  double mean_term = 0.0;       // -E(gamma M^-1 d_q((1/g*) d_q(g* gamma / M)))
  std::size_t excluded = 0;     // masked nodes left out of the transport term
};

// d_t eta taken from the conditional right-hand side of the discretized
// dynamics unless supplied.
PositionEntropyDerivatives position_entropy_derivatives(const FokkerPlanck& fp, const DensityField& f,
                                                        const EquilibriumState& eq,
                                                        std::optional<std::span<const double>> dt_eta = {});

// d_t eta of the discretized dynamics: (L+ f)/f - (int L+ f dp)/g.
std::vector<double> measured_dt_eta(const FokkerPlanck& fp, const DensityField& f);

// Position tilts for break states: g0 proportional to g*(1 + a s(q)) with
// s = cos(k q) on circles and tanh(q) on lines, or g*(q - a) for a shift.
struct BreakSpec {
  enum class Kind { tilt, shift };
  Kind kind = Kind::tilt;
  double amplitude = 0.2;
  int harmonic = 1;
};

std::vector<double> break_position_density(const BreakSpec& spec, const EquilibriumState& eq,
                                           const ModelSpec& model);
// f0 = g0 h* for a supplied positive position density.
DensityField build_break_initial_condition(std::span<const double> g0, const EquilibriumState& eq);
DensityField build_break_initial_condition(const BreakSpec& spec, const EquilibriumState& eq,
                                           const ModelSpec& model);

struct FitCheck {
  std::string name;
  double fitted = 0.0;
  double predicted = 0.0;
  double error = 0.0;      // relative unless noted in the name
  double tolerance = 0.0;
  bool pass = false;
};

struct BreakAnalysis {
  BreakSpec spec;
  double window = 0.0;
  double dt = 0.0;
  std::vector<double> t, F, G, H;
  double F0 = 0.0, H0 = 0.0;
  double F_dot = 0.0, F_ddot = 0.0, F_dddot = 0.0;
  double G_dot = 0.0, G_ddot = 0.0;
  double H_dot = 0.0, H_ddot = 0.0;
  double F_dddot_pred = 0.0;  // -E |M^-1 d_q xi|_D^2
  double H_ddot_pred = 0.0;   // T E |d_q xi|_{M^-1}^2
  double G_ddot_formula = 0.0;  // position-entropy second derivative at t = 0
  double r2_F = 0.0, r2_G = 0.0, r2_H = 0.0;
  double cubic_residual = 0.0;  // rms residual / (|F'''| w^3 / 6)
  double dt_eta_error = 0.0;    // f*-weighted L2 relative error of d_t eta
  std::vector<FitCheck> checks;
  bool pass = false;
  std::string status;
};

struct BreakOptions {
  double window = 0.0;  // 0 selects a window from the predicted F'''
  int samples = 9;
  int substeps = 0;     // RK4 steps per sample interval; 0 selects from stability
};

// Evolves f0 = g0 h* over [0, w] and compares fitted derivatives with the
// break-time identities. A fit with R^2 < 0.999 raises window_too_wide.
BreakAnalysis break_analysis(const FokkerPlanck& fp, const EquilibriumState& eq, const BreakSpec& spec,
                             const BreakOptions& options = {});

struct MonotonicityReport {
  bool monotone = true;
  double worst_increase = 0.0;
  long offending_interval = -1;
  std::vector<std::pair<double, double>> flat_segments;  // (t_k, H(t_k)) where |dF| < 1e-8
  double max_waterbed = -INFINITY;  // max FD (G' + H')
  long simultaneous_rises = 0;      // intervals with dG > 1e-12 and dH > 1e-12
};

MonotonicityReport monotonicity_audit(std::span<const EntropyReport> reports, double tolerance = 1e-9);

}  // namespace klab
