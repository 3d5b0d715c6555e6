#pragma once

#include "klab/entropy.hpp"
#include "klab/equilibrium.hpp"
#include "klab/grid.hpp"
#include "klab/model.hpp"

#include <complex>
#include <cstdint>
#include <functional>
#include <vector>

namespace klab {

using CVec = Eigen::VectorXcd;

// Linearized log-ratio operators on a coarse grid (n = 1). Matrices act on
// xi (q nodes) and eta (q x p nodes, row-major). The *_gs matrices are the
// same operators in the orthonormal ground-state basis u = sqrt(w) x, where
// w are the quadrature weights of g* (xi) and f* (eta).
struct LinearizedOperator {
  PhaseGrid grid;
  int stencil_order = 8;
  Vec wg, wf;  // g* dq and f* dq dp
  Vec sg, sf;  // square roots

  Mat Xi;          // eta -> xi
  Mat Phi;         // xi -> eta, discretized independently of Xi
  Mat Psi;         // eta -> eta, Phi-part taken as -Xi^dagger

  Mat Xi_gs, Phi_gs, Psi_gs;
  Mat constraint_h;  // orthonormal columns spanning the excluded eta directions
  Vec constraint_g;  // unit excluded xi direction
  Mat Lambda_gs;     // [[0, Pg Xi Ph], [-Ph Xi^T Pg, Ph Psi Ph]]
  Mat Lambda_raw_gs; // same without projectors
  Mat Ldag;          // discretized FPKE operator on the same grid, same stencils

  int nq() const { return grid.nq(); }
  int np() const { return grid.np(); }
};

// Antisymmetric first-derivative and symmetric second-derivative central
// matrices of the given even order, periodic or with zero ghost values.
Mat central_d1(int n, double h, int order, bool periodic);
Mat central_d2(int n, double h, int order, bool periodic);

LinearizedOperator assemble_linearized_operators(const ModelSpec& model, const EquilibriumState& eq,
                                                 int stencil_order = 8);

struct AdjointnessReport {
  double independent_defect = 0.0;  // |Phi + Xi^dagger| / |Xi| for the independent Phi
  double enforced_defect = 0.0;     // same for the Phi used inside Psi and Lambda
  double max_form = 0.0;            // max <Phi Xi psi, psi>_{f*} over probes
  double max_form_identity = 0.0;   // max |<Phi Xi psi,psi> + |Xi psi|^2| / |Xi psi|^2
  double symmetry_defect = 0.0;     // weighted self-adjointness of -Phi Xi
  double projector_defect = 0.0;    // |P Lambda - Lambda P| / |Lambda| for the assembled Lambda
  double raw_constraint_leak = 0.0; // |(I - P) Lambda P| / |Lambda| without projection
  int probes = 0;
};

AdjointnessReport adjointness_audit(const LinearizedOperator& ops, int probes = 100, std::uint64_t seed = 7);

struct EigenPairing {
  std::complex<double> lambda;
  std::complex<double> partner;
  double distance = 0.0;  // |lambda - partner| / |lambda|
  double high_frequency = 0.0;
};

struct SpectrumReport {
  std::vector<std::complex<double>> lambda_eigs;
  std::vector<std::complex<double>> ldag_eigs;
  std::vector<double> lambda_high_frequency;  // per Lambda eigenvalue, NaN when not evaluated
  std::vector<EigenPairing> pairs;            // slowest resolved Lambda modes
  double worst_pairing_10 = 0.0;
  double spectral_radius = 0.0;
  double max_real_relative = 0.0;  // max Re(lambda) / rho
  int positive_count = 0;          // Re(lambda) > 1e-6 rho
  double max_quad_residual = 0.0;  // over all nonzero Lambda eigenpairs
  std::vector<double> quad_residuals;  // for the paired modes
  double zero_psi_defect = 0.0;        // |sorted Im spectrum - singular values| / sigma_max
  int pairing_modes = 0;
};

struct SpectrumOptions {
  int pairs = 30;
  double high_frequency_limit = 0.5;  // modes above this fraction are unresolved
  bool zero_psi_check = true;
};

// Dense eigendecompositions of Lambda and L+, resolution filter on Lambda
// eigenvectors, greedy nearest pairing and the quadratic relation.
SpectrumReport spectrum(const LinearizedOperator& ops, const SpectrumOptions& options = {});

// Fraction of the 2D DFT energy above a quarter of the Nyquist index range
// in q or p for a field on the grid.
double high_frequency_fraction(const PhaseGrid& grid, const CVec& field);

struct QuadraticApprox {
  double F = 0.0, G = 0.0, H = 0.0;
  double QF = 0.0, QG = 0.0, QH = 0.0;
  double cross = 0.0;  // int f* xi eta
  double rF = 0.0, rG = 0.0, rH = 0.0;
  double max_theta = 0.0;
  bool range_warning = false;  // max |theta| > 1
};

QuadraticApprox quadratic_entropy_approx(const DensityField& f, const EquilibriumState& eq, const ModelSpec& model);

// f proportional to f* exp(a phi), phi mixing position, kinetic-energy and odd
// momentum components so that third-order terms do not cancel by symmetry.
DensityField perturbed_equilibrium(const EquilibriumState& eq, const ModelSpec& model, double amplitude);

struct QuadraticScaling {
  QuadraticApprox full, half;
  double ratio_F = 0.0, ratio_G = 0.0, ratio_H = 0.0;
};

QuadraticScaling quadratic_scaling(const EquilibriumState& eq, const ModelSpec& model, double amplitude,
                                   const std::function<DensityField(double)>& make = {});

}  // namespace klab
