#pragma once

#include "klab/equilibrium.hpp"
#include "klab/grid.hpp"
#include "klab/model.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace klab {

// Particles stored coordinate-major: q[i * n + k] is coordinate k of
// particle i.
struct Ensemble {
  int n = 1;
  std::size_t count = 0;
  std::vector<double> q;
  std::vector<double> p;
  std::vector<unsigned char> flagged;  // nonfinite, excluded from statistics
  double t = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;  // counter of the next noise draw
  // Second Box-Muller variate of the pair drawn on the previous even step
  // (n = 1), valid while spare_step == step.
  std::vector<double> spare;
  std::uint64_t spare_step = ~std::uint64_t{0};

  Ensemble() = default;
  Ensemble(int dim, std::size_t particles, std::uint64_t seed);

  PhasePoint point(std::size_t i) const;
  void set(std::size_t i, const PhasePoint& x);
  std::size_t flagged_count() const;
};

std::size_t worker_threads();  // KLAB_THREADS or 1

// One Euler-Maruyama step with left-point coefficients. Noise for particle i
// at step k comes from the Philox stream (seed, i, k).
void em_step(const ModelSpec& model, Ensemble& e, double dt, std::size_t threads = 1);

// Initial ensembles.
Ensemble point_ensemble(const ModelSpec& model, const PhasePoint& x, std::size_t count, std::uint64_t seed);
Ensemble gaussian_ensemble(const ModelSpec& model, const PhasePoint& mean, double sd_q, double sd_p,
                           std::size_t count, std::uint64_t seed);
// Exact draw from f* for n = 1: inverse CDF of a tabulated g*, then
// p | q ~ N(0, T M(q)).
Ensemble equilibrium_ensemble(const ModelSpec& model, std::size_t count, std::uint64_t seed,
                              int table_nodes = 4096);

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};
// Batch-means estimate over fixed contiguous batches (deterministic order).
MeanSe batch_mean(std::span<const double> x, std::span<const unsigned char> exclude = {}, int batches = 100);

struct MomentRow {
  double t = 0.0;
  MeanSe H, T, V;
  MeanSe drift;   // 1/2 <M^-1, D> - |Qdot|_F^2
  MeanSe q_mean, p_mean, q_var, p_var;  // first coordinate
  std::size_t flagged = 0;
};

struct HistogramSpec {
  int nq = 0;  // 0 disables the histogram
  int np = 0;
  double q_lo = 0.0, q_hi = 0.0;  // line models
  double q_origin = 0.0;          // circle models: centre of bin 0
  double p_max = 0.0;
};

struct SimulationConfig {
  std::size_t particles = 1000;
  double dt = 1e-3;
  double t_end = 1.0;
  std::uint64_t seed = 1;
  int sample_every = 10;
  std::size_t threads = 1;
  HistogramSpec histogram;
};

struct SimulationResult {
  std::vector<MomentRow> moments;
  Ensemble final_ensemble;
  std::optional<DensityField> histogram;
  double dt = 0.0;
  long steps = 0;
  bool failed = false;
  std::string failure;
};

SimulationResult simulate_ensemble(const ModelSpec& model, Ensemble initial, const SimulationConfig& config);

// Normalized 2D histogram (n = 1) on bins of the given spec. Particles
// outside the momentum window count toward the normalization.
DensityField histogram_density(const ModelSpec& model, const Ensemble& e, const HistogramSpec& spec);

// Sums blocks of fq x fp cells of a grid density into a coarse density. For a
// periodic q axis, block j is centred between fine nodes j fq - 1 and j fq.
DensityField coarsen_density(const DensityField& f, int fq, int fp);
// HistogramSpec whose bins are exactly the blocks of coarsen_density.
HistogramSpec matching_histogram(const PhaseGrid& fine, int fq, int fp);
double l1_distance(const DensityField& a, const DensityField& b);

// Energy audit over paired particle increments between samples.
struct EnergyInterval {
  double t0 = 0.0, t1 = 0.0;
  MeanSe fd_H;           // (H(t1) - H(t0)) / (t1 - t0)
  MeanSe theory_H;       // left-point 1/2 <M^-1,D> - |Qdot|_F^2
  MeanSe diff_H;         // paired fd - theory
  double conditional_H = 0.0;  // 1/2 E<M^-1 D, I - beta E(PP|Q) M^-1>
  MeanSe fd_T;
  MeanSe theory_T;       // E<M^-1, D/2 - E(PP|Q) M^-1 F - E(P|Q) V'^T>
  MeanSe diff_T;
  double conditional_T = 0.0;
  double z_H = 0.0;
  double z_T = 0.0;
  int merged_bins = 0;
};

struct EnergyAudit {
  std::vector<double> t;
  std::vector<double> EH, ET, EV;
  std::vector<MeanSe> drift;
  std::vector<EnergyInterval> intervals;
  EnergyInterval whole;  // first to last sample
  int intervals_beyond_3se = 0;
  double max_energy_split_error = 0.0;  // |EH - ET - EV|
};

struct EnergyAuditConfig {
  double dt = 1e-3;
  long steps = 100;
  int sample_every = 1;
  int bins = 32;
  int min_per_bin = 30;
  std::size_t threads = 1;
};

EnergyInterval energy_interval(const ModelSpec& model, const Ensemble& a, const Ensemble& b, int bins = 32,
                               int min_per_bin = 30);
// Runs the ensemble forward and audits every sampled interval. At least 100
// samples are required.
EnergyAudit energy_balance_audit(const ModelSpec& model, Ensemble initial, const EnergyAuditConfig& config);

// Deterministic damped Hamiltonian dynamics (D = 0).
struct BreakEvent {
  double t = 0.0;
  double q = 0.0;
  double dV = 0.0;
  double H_dot = 0.0;          // analytic at the event
  double H_ddot_fit = 0.0;
  double H_dddot_fit = 0.0;
  double H_dddot_pred = 0.0;   // -2 (V'/M)^2 F
  double H_dot_max = 0.0;      // max |Hdot| along the trajectory so far
  double V_ddot_fit = 0.0;
  double T_ddot_fit = 0.0;
  double V_ddot_pred = 0.0;    // -V'^2 / M
  double cubic_rel_error = 0.0;
  double T_V_rel_error = 0.0;  // |T'' + V''| / |V''|
  bool pass = false;
};

struct DeterministicReport {
  std::vector<BreakEvent> events;
  bool no_events = true;
  double max_H_dot_rel_error = 0.0;  // FD vs -|M^-1 p|_F^2
  double max_energy_increase = 0.0;  // max (H_{k+1} - H_k) / max(1, |H(0)|) over samples
  double energy_drift = 0.0;         // max |H(t) - H(0)| / max(1, |H(0)|)
  double H0 = 0.0;
  std::vector<double> t, q, p, H;    // sampled trajectory (n = 1 first coordinate)
  std::string message;
};

struct DeterministicOptions {
  std::function<Mat(const Vec&)> damping;  // F(q)
  double tolerance = 1e-12;
  double fit_half_window = 0.05;
  int fit_points = 41;
  int samples = 2000;
  int max_events = 1;
};

DeterministicReport deterministic_energy_audit(const ModelSpec& model, const PhasePoint& x0, double t_end,
                                               const DeterministicOptions& options);

}  // namespace klab
