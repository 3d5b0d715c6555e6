#include "klab/model.hpp"

#include "klab/error.hpp"

#include <cmath>
#include <sstream>

namespace klab {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::degenerate_mass: return "degenerate mass";
    case ErrorKind::invalid_model: return "invalid model";
    case ErrorKind::grid: return "grid error";
    case ErrorKind::resolution: return "resolution error";
    case ErrorKind::integrability: return "integrability error";
    case ErrorKind::temperature_too_low: return "temperature too low";
    case ErrorKind::truncation: return "truncation error";
    case ErrorKind::non_unique_minimum: return "non-unique minimum";
    case ErrorKind::degenerate_hessian: return "degenerate Hessian";
    case ErrorKind::positivity: return "positivity violation";
    case ErrorKind::quadrature_defect: return "quadrature defect";
    case ErrorKind::discretization_defect: return "discretization defect";
    case ErrorKind::stability: return "stability violation";
    case ErrorKind::window_too_wide: return "window too wide";
    case ErrorKind::numerical: return "numerical error";
    case ErrorKind::schema: return "schema error";
    case ErrorKind::io: return "I/O error";
  }
  return "error";
}

PositionSpace PositionSpace::line(int n, double lo, double hi) {
  if (!(lo < hi)) throw Error(ErrorKind::invalid_model, "line bounds need q_lo < q_hi");
  return PositionSpace{std::vector<Axis>(static_cast<std::size_t>(n), Axis{Topology::line, lo, hi})};
}

PositionSpace PositionSpace::circle(int n) {
  return PositionSpace{std::vector<Axis>(static_cast<std::size_t>(n), Axis{Topology::circle, 0.0, two_pi})};
}

bool PositionSpace::all_circle() const {
  for (const auto& a : axes)
    if (a.topology != Topology::circle) return false;
  return true;
}

void PositionSpace::wrap(Vec& q) const {
  for (int k = 0; k < dim(); ++k) {
    if (axes[static_cast<std::size_t>(k)].topology != Topology::circle) continue;
    double r = std::fmod(q[k], two_pi);
    if (r < 0) r += two_pi;
    if (r >= two_pi) r = 0.0;
    q[k] = r;
  }
}

bool PositionSpace::contains(const Vec& q) const {
  if (q.size() != dim()) return false;
  for (int k = 0; k < dim(); ++k) {
    const auto& a = axes[static_cast<std::size_t>(k)];
    if (a.topology == Topology::circle) {
      if (!(q[k] >= 0.0 && q[k] < two_pi)) return false;
    } else if (!(q[k] >= a.lo && q[k] <= a.hi)) {
      return false;
    }
  }
  return true;
}

Coeffs1 Family::eval1(double q) const {
  Vec x(1);
  x[0] = q;
  Coeffs1 c;
  c.V = V(x);
  c.dV = dV(x)[0];
  c.d2V = d2V(x)(0, 0);
  c.M = M(x)(0, 0);
  c.dM = dM(x, 0)(0, 0);
  c.d2M = d2M(x, 0, 0)(0, 0);
  c.D = D(x)(0, 0);
  c.dD = dD(x, 0)(0, 0);
  c.d2D = d2D(x, 0, 0)(0, 0);
  return c;
}

std::vector<Vec> sample_nodes(const PositionSpace& space, int count) {
  std::vector<Vec> nodes;
  if (space.dim() != 1) {
    // Diagonal sweep through the box is enough for the separable built-ins.
    for (int i = 0; i < count; ++i) {
      Vec q(space.dim());
      for (int k = 0; k < space.dim(); ++k) {
        const auto& a = space.axes[static_cast<std::size_t>(k)];
        q[k] = a.lo + (a.hi - a.lo) * (i + 0.5) / count;
      }
      nodes.push_back(q);
    }
    return nodes;
  }
  const auto& a = space.axes[0];
  for (int i = 0; i < count; ++i) {
    Vec q(1);
    q[0] = a.topology == Topology::circle ? two_pi * i / count : a.lo + (a.hi - a.lo) * (i + 0.5) / count;
    nodes.push_back(q);
  }
  return nodes;
}

namespace {

double min_eigenvalue(const Mat& a) {
  if (a.rows() == 1) return a(0, 0);
  Eigen::SelfAdjointEigenSolver<Mat> es(a, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

}  // namespace

ModelSpec make_model(std::shared_ptr<const Family> family, PositionSpace space, double beta,
                     const std::vector<Vec>& check_nodes, double eig_floor) {
  if (!family) throw Error(ErrorKind::invalid_model, "missing model family");
  if (!(beta > 0.0) || !std::isfinite(beta)) throw Error(ErrorKind::invalid_model, "beta must be positive");
  if (space.dim() != family->dim())
    throw Error(ErrorKind::invalid_model, "position space dimension does not match the model");
  const auto nodes = check_nodes.empty() ? sample_nodes(space, 64) : check_nodes;
  for (const auto& q : nodes) {
    const double mmin = min_eigenvalue(family->M(q));
    const double dmin = min_eigenvalue(family->D(q));
    if (!(mmin > eig_floor)) {
      std::ostringstream os;
      os << "M not positive definite at q = " << q.transpose() << " (min eigenvalue " << mmin << ")";
      throw Error(ErrorKind::invalid_model, os.str());
    }
    if (!(dmin > eig_floor)) {
      std::ostringstream os;
      os << "D not positive definite at q = " << q.transpose() << " (min eigenvalue " << dmin << ")";
      throw Error(ErrorKind::invalid_model, os.str());
    }
  }
  return ModelSpec{std::move(family), std::move(space), beta};
}

Mat checked_mass_inverse(const Mat& m) {
  if (m.rows() == 1) {
    if (!(m(0, 0) > 0.0) || !std::isfinite(m(0, 0))) throw Error(ErrorKind::degenerate_mass, "M(q) <= 0");
    return Mat::Constant(1, 1, 1.0 / m(0, 0));
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(m);
  const auto& ev = es.eigenvalues();
  if (!(ev.minCoeff() > 0.0) || ev.maxCoeff() / ev.minCoeff() > 1e12)
    throw Error(ErrorKind::degenerate_mass, "condition number of M(q) exceeds 1e12");
  return es.eigenvectors() * ev.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
}

double kinetic_energy(const ModelSpec& model, const PhasePoint& x) {
  const Mat minv = checked_mass_inverse(model.family->M(x.q));
  return 0.5 * x.p.dot(minv * x.p);
}

Energies hamiltonian(const ModelSpec& model, const PhasePoint& x) {
  Energies e;
  e.V = model.family->V(x.q);
  e.T = kinetic_energy(model, x);
  e.H = e.V + e.T;
  return e;
}

Vec momentum_from_velocity(const ModelSpec& model, const Vec& q, const Vec& qdot) {
  const Mat m = model.family->M(q);
  checked_mass_inverse(m);
  return m * qdot;
}

Vec velocity_from_momentum(const ModelSpec& model, const Vec& q, const Vec& p) {
  return checked_mass_inverse(model.family->M(q)) * p;
}

Mat mass_sensitivity(const ModelSpec& model, const Vec& q, int k) {
  if (k < 0 || k >= model.dim()) throw Error(ErrorKind::invalid_model, "coordinate index out of range");
  const Mat minv = checked_mass_inverse(model.family->M(q));
  Mat mk = minv * model.family->dM(q, k) * minv;
  return 0.5 * (mk + mk.transpose());
}

HamiltonianGradient grad_hamiltonian(const ModelSpec& model, const PhasePoint& x) {
  const Mat minv = checked_mass_inverse(model.family->M(x.q));
  HamiltonianGradient g;
  g.dp = minv * x.p;
  g.dq = model.family->dV(x.q);
  if (!model.family->constant_mass()) {
    for (int k = 0; k < model.dim(); ++k) {
      const Mat mk = minv * model.family->dM(x.q, k) * minv;
      g.dq[k] -= 0.5 * x.p.dot(mk * x.p);
    }
  }
  return g;
}

Mat damping_matrix(const ModelSpec& model, const Vec& q) {
  return 0.5 * model.beta * model.family->D(q);
}

double einstein_residual(const ModelSpec& model, const std::vector<Vec>& nodes,
                         const std::function<Mat(const Vec&)>& damping) {
  double r = 0.0;
  for (const auto& q : nodes) r = std::max(r, (damping(q) - damping_matrix(model, q)).cwiseAbs().maxCoeff());
  return r;
}

double dqH1(const Coeffs1& c, double p) {
  // V' - p^2 M' / (2 M^2)
  return c.dV - 0.5 * p * p * c.dM / (c.M * c.M);
}

}  // namespace klab
