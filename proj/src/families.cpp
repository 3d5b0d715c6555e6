#include "klab/error.hpp"
#include "klab/model.hpp"

#include <boost/math/interpolators/cardinal_cubic_b_spline.hpp>

#include <cmath>

namespace klab {

namespace {

// Isotropic families with constant M = m I and D = d I.
class IsotropicFamily : public Family {
 public:
  IsotropicFamily(int n, double mass, double diffusion) : n_(n), m_(mass), d_(diffusion) {
    if (n < 1) throw Error(ErrorKind::invalid_model, "dimension must be >= 1");
    if (!(mass > 0.0)) throw Error(ErrorKind::invalid_model, "mass must be positive");
    if (!(diffusion >= 0.0)) throw Error(ErrorKind::invalid_model, "diffusion must be nonnegative");
  }

  int dim() const override { return n_; }
  Mat M(const Vec&) const override { return m_ * Mat::Identity(n_, n_); }
  Mat dM(const Vec&, int) const override { return Mat::Zero(n_, n_); }
  Mat d2M(const Vec&, int, int) const override { return Mat::Zero(n_, n_); }
  Mat D(const Vec&) const override { return d_ * Mat::Identity(n_, n_); }
  Mat dD(const Vec&, int) const override { return Mat::Zero(n_, n_); }
  Mat d2D(const Vec&, int, int) const override { return Mat::Zero(n_, n_); }
  bool constant_mass() const override { return true; }

 protected:
  int n_;
  double m_;
  double d_;
};

class Harmonic final : public IsotropicFamily {
 public:
  Harmonic(int n, double kappa, double mass, double diffusion)
      : IsotropicFamily(n, mass, diffusion), kappa_(kappa) {
    if (!(kappa > 0.0)) throw Error(ErrorKind::invalid_model, "stiffness must be positive");
  }
  std::string name() const override { return "harmonic"; }
  double V(const Vec& q) const override { return 0.5 * kappa_ * q.squaredNorm(); }
  Vec dV(const Vec& q) const override { return kappa_ * q; }
  Mat d2V(const Vec&) const override { return kappa_ * Mat::Identity(n_, n_); }
  Coeffs1 eval1(double q) const override {
    return {0.5 * kappa_ * q * q, kappa_ * q, kappa_, m_, 0, 0, d_, 0, 0};
  }

 private:
  double kappa_;
};

class Pendulum final : public IsotropicFamily {
 public:
  Pendulum(int n, double v0, double mass, double diffusion) : IsotropicFamily(n, mass, diffusion), v0_(v0) {
    if (!(v0 > 0.0)) throw Error(ErrorKind::invalid_model, "v0 must be positive");
  }
  std::string name() const override { return "pendulum"; }
  double V(const Vec& q) const override {
    double s = 0.0;
    for (int k = 0; k < n_; ++k) s += 1.0 - std::cos(q[k]);
    return v0_ * s;
  }
  Vec dV(const Vec& q) const override { return v0_ * q.array().sin().matrix(); }
  Mat d2V(const Vec& q) const override { return (v0_ * q.array().cos()).matrix().asDiagonal(); }
  Coeffs1 eval1(double q) const override {
    const double s = std::sin(q), c = std::cos(q);
    return {v0_ * (1.0 - c), v0_ * s, v0_ * c, m_, 0, 0, d_, 0, 0};
  }

 private:
  double v0_;
};

// One-dimensional family given by scalar callbacks.
class Scalar1Family : public Family {
 public:
  int dim() const override { return 1; }
  double V(const Vec& q) const override { return eval1(q[0]).V; }
  Vec dV(const Vec& q) const override { return Vec::Constant(1, eval1(q[0]).dV); }
  Mat d2V(const Vec& q) const override { return Mat::Constant(1, 1, eval1(q[0]).d2V); }
  Mat M(const Vec& q) const override { return Mat::Constant(1, 1, eval1(q[0]).M); }
  Mat dM(const Vec& q, int) const override { return Mat::Constant(1, 1, eval1(q[0]).dM); }
  Mat d2M(const Vec& q, int, int) const override { return Mat::Constant(1, 1, eval1(q[0]).d2M); }
  Mat D(const Vec& q) const override { return Mat::Constant(1, 1, eval1(q[0]).D); }
  Mat dD(const Vec& q, int) const override { return Mat::Constant(1, 1, eval1(q[0]).dD); }
  Mat d2D(const Vec& q, int, int) const override { return Mat::Constant(1, 1, eval1(q[0]).d2D); }
};

class VariableMassPendulum final : public Scalar1Family {
 public:
  VariableMassPendulum(double v0, double m0, double mu, double d0, double d_sin2)
      : v0_(v0), m0_(m0), mu_(mu), d0_(d0), ds_(d_sin2) {
    if (!(std::abs(mu) < 1.0)) throw Error(ErrorKind::invalid_model, "|mu| < 1 is required for M > 0");
    if (!(m0 > 0.0) || !(d0 > 0.0) || !(v0 > 0.0)) throw Error(ErrorKind::invalid_model, "v0, m0, d0 must be positive");
    if (!(d_sin2 > -1.0)) throw Error(ErrorKind::invalid_model, "diffusion modulation must exceed -1");
  }
  std::string name() const override { return "variable_mass_pendulum"; }
  Coeffs1 eval1(double q) const override {
    const double s = std::sin(q), c = std::cos(q);
    Coeffs1 r;
    r.V = v0_ * (1.0 - c);
    r.dV = v0_ * s;
    r.d2V = v0_ * c;
    r.M = m0_ * (1.0 + mu_ * c);
    r.dM = -m0_ * mu_ * s;
    r.d2M = -m0_ * mu_ * c;
    r.D = d0_ * (1.0 + ds_ * s * s);
    r.dD = d0_ * ds_ * 2.0 * s * c;
    r.d2D = d0_ * ds_ * 2.0 * (c * c - s * s);
    return r;
  }

 private:
  double v0_, m0_, mu_, d0_, ds_;
};

class ExponentialMass final : public Scalar1Family {
 public:
  ExponentialMass(double v0, double d0) : v0_(v0), d0_(d0) {}
  std::string name() const override { return "exponential_mass"; }
  Coeffs1 eval1(double q) const override {
    const double e = std::exp(q);
    return {0.5 * v0_ * q * q, v0_ * q, v0_, e, e, e, d0_, 0, 0};
  }

 private:
  double v0_, d0_;
};

class Tabulated final : public Scalar1Family {
  using Spline = boost::math::interpolators::cardinal_cubic_b_spline<double>;

 public:
  explicit Tabulated(const Table1& t) : periodic_(t.periodic) {
    const std::size_t n = t.q.size();
    if (n < 5 || t.V.size() != n || t.M.size() != n || t.D.size() != n)
      throw Error(ErrorKind::invalid_model, "tabulated model needs >= 5 nodes and equal-length V, M, D");
    h_ = t.q[1] - t.q[0];
    if (!(h_ > 0.0)) throw Error(ErrorKind::invalid_model, "tabulated nodes must increase");
    for (std::size_t i = 1; i < n; ++i)
      if (std::abs(t.q[i] - t.q[i - 1] - h_) > 1e-9 * std::abs(h_))
        throw Error(ErrorKind::invalid_model, "tabulated nodes must be uniform");
    for (std::size_t i = 0; i < n; ++i)
      if (!(t.M[i] > 0.0) || !(t.D[i] > 0.0))
        throw Error(ErrorKind::invalid_model, "tabulated M and D must be positive");
    if (periodic_) {
      if (std::abs(h_ * static_cast<double>(n) - two_pi) > 1e-9)
        throw Error(ErrorKind::invalid_model, "periodic table must cover [0, 2pi) uniformly");
      // Three tiled periods; evaluation stays in the middle one, so the
      // spline end conditions do not reach it.
      q0_ = t.q[0] - two_pi;
      v_ = make(tile(t.V));
      m_ = make(tile(t.M));
      d_ = make(tile(t.D));
    } else {
      q0_ = t.q[0];
      lo_ = t.q.front();
      hi_ = t.q.back();
      v_ = make(t.V);
      m_ = make(t.M);
      d_ = make(t.D);
    }
  }

  std::string name() const override { return "tabulated"; }

  Coeffs1 eval1(double q) const override {
    double x = q;
    if (periodic_) {
      x = std::fmod(x, two_pi);
      if (x < 0) x += two_pi;
    } else if (x < lo_ || x > hi_) {
      throw Error(ErrorKind::invalid_model, "evaluation outside the tabulated range");
    }
    Coeffs1 c;
    c.V = (*v_)(x);
    c.dV = v_->prime(x);
    c.d2V = v_->double_prime(x);
    c.M = (*m_)(x);
    c.dM = m_->prime(x);
    c.d2M = m_->double_prime(x);
    c.D = (*d_)(x);
    c.dD = d_->prime(x);
    c.d2D = d_->double_prime(x);
    return c;
  }

 private:
  static std::vector<double> tile(const std::vector<double>& y) {
    std::vector<double> r;
    r.reserve(3 * y.size() + 1);
    for (int k = 0; k < 3; ++k) r.insert(r.end(), y.begin(), y.end());
    r.push_back(y.front());
    return r;
  }
  std::shared_ptr<Spline> make(const std::vector<double>& y) const {
    return std::make_shared<Spline>(y.data(), y.size(), q0_, h_);
  }

  bool periodic_;
  double h_ = 0, q0_ = 0, lo_ = 0, hi_ = 0;
  std::shared_ptr<Spline> v_, m_, d_;
};

}  // namespace

std::shared_ptr<const Family> harmonic_family(int n, double kappa, double mass, double diffusion) {
  return std::make_shared<Harmonic>(n, kappa, mass, diffusion);
}

std::shared_ptr<const Family> pendulum_family(int n, double v0, double mass, double diffusion) {
  return std::make_shared<Pendulum>(n, v0, mass, diffusion);
}

std::shared_ptr<const Family> variable_mass_pendulum_family(double v0, double m0, double mu, double d0,
                                                            double d_sin2) {
  return std::make_shared<VariableMassPendulum>(v0, m0, mu, d0, d_sin2);
}

std::shared_ptr<const Family> exponential_mass_family(double v0, double d0) {
  return std::make_shared<ExponentialMass>(v0, d0);
}

std::shared_ptr<const Family> tabulated_family(const Table1& table) {
  return std::make_shared<Tabulated>(table);
}

}  // namespace klab
