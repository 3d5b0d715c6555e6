#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace klab {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double two_pi = 2.0 * std::numbers::pi;

enum class Topology { line, circle };

struct Axis {
  Topology topology = Topology::line;
  double lo = 0.0;
  double hi = 0.0;
};

// Per-coordinate topology. Circle axes are identified with [0, 2pi).
struct PositionSpace {
  std::vector<Axis> axes;

  static PositionSpace line(int n, double lo, double hi);
  static PositionSpace circle(int n);

  int dim() const { return static_cast<int>(axes.size()); }
  bool all_circle() const;
  // Reduces circle coordinates mod 2pi, leaves line coordinates untouched.
  void wrap(Vec& q) const;
  bool contains(const Vec& q) const;
};

struct PhasePoint {
  Vec q;
  Vec p;
};

// Pointwise coefficients of a one-degree-of-freedom model.
struct Coeffs1 {
  double V = 0, dV = 0, d2V = 0;
  double M = 1, dM = 0, d2M = 0;
  double D = 0, dD = 0, d2D = 0;
};

// A family of models: potential, mass and diffusion with their first and
// second derivatives. Implementations are immutable.
class Family {
 public:
  virtual ~Family() = default;

  virtual std::string name() const = 0;
  virtual int dim() const = 0;

  virtual double V(const Vec& q) const = 0;
  virtual Vec dV(const Vec& q) const = 0;
  virtual Mat d2V(const Vec& q) const = 0;
  virtual Mat M(const Vec& q) const = 0;
  // partial_{q_k} M
  virtual Mat dM(const Vec& q, int k) const = 0;
  virtual Mat d2M(const Vec& q, int k, int l) const = 0;
  virtual Mat D(const Vec& q) const = 0;
  virtual Mat dD(const Vec& q, int k) const = 0;
  virtual Mat d2D(const Vec& q, int k, int l) const = 0;

  // Fast path for n = 1. The default composes the matrix evaluators.
  virtual Coeffs1 eval1(double q) const;

  // True when M does not depend on q.
  virtual bool constant_mass() const { return false; }
};

struct ModelSpec {
  std::shared_ptr<const Family> family;
  PositionSpace space;
  double beta = 1.0;

  int dim() const { return family->dim(); }
  double temperature() const { return 1.0 / beta; }
};

// Built-in families.
std::shared_ptr<const Family> harmonic_family(int n, double kappa, double mass, double diffusion);
std::shared_ptr<const Family> pendulum_family(int n, double v0, double mass, double diffusion);
// M(q) = m0 (1 + mu cos q), D(q) = d0 (1 + d_sin2 sin^2 q), V = v0 (1 - cos q).
std::shared_ptr<const Family> variable_mass_pendulum_family(double v0, double m0, double mu,
                                                            double d0, double d_sin2 = 0.0);
// M(q) = exp(q), constant D, V = v0 q^2 / 2 (line). Used for centrifugal-term checks.
std::shared_ptr<const Family> exponential_mass_family(double v0, double d0);

struct Table1 {
  std::vector<double> q;  // uniform nodes
  std::vector<double> V, M, D;
  bool periodic = false;  // nodes cover [0, 2pi) without the endpoint
};
std::shared_ptr<const Family> tabulated_family(const Table1& table);

// Registration: checks beta > 0, the space dimension, and M, D > 0 (smallest
// eigenvalue above floor) at the supplied nodes.
ModelSpec make_model(std::shared_ptr<const Family> family, PositionSpace space, double beta,
                     const std::vector<Vec>& check_nodes = {}, double eig_floor = 1e-12);

// Nodes at which registration checks definiteness for one-dimensional models.
std::vector<Vec> sample_nodes(const PositionSpace& space, int count);

struct Energies {
  double V = 0;
  double T = 0;
  double H = 0;
};

struct HamiltonianGradient {
  Vec dq;
  Vec dp;
};

double kinetic_energy(const ModelSpec& model, const PhasePoint& x);
Energies hamiltonian(const ModelSpec& model, const PhasePoint& x);
Vec momentum_from_velocity(const ModelSpec& model, const Vec& q, const Vec& qdot);
Vec velocity_from_momentum(const ModelSpec& model, const Vec& q, const Vec& p);
// M_k = M^{-1} (partial_k M) M^{-1}, k zero-based.
Mat mass_sensitivity(const ModelSpec& model, const Vec& q, int k);
HamiltonianGradient grad_hamiltonian(const ModelSpec& model, const PhasePoint& x);
// Einstein relation F = beta D / 2.
Mat damping_matrix(const ModelSpec& model, const Vec& q);
// max-norm of F - beta D / 2 for an independently supplied damping map.
double einstein_residual(const ModelSpec& model, const std::vector<Vec>& nodes,
                         const std::function<Mat(const Vec&)>& damping);

// Inverse of M(q) with the degenerate-mass check (condition number > 1e12).
Mat checked_mass_inverse(const Mat& m);

// Scalar helpers for n = 1.
double dqH1(const Coeffs1& c, double p);

}  // namespace klab
