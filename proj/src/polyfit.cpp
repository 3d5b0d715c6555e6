#include "klab/polyfit.hpp"

#include "klab/error.hpp"

#include <Eigen/Dense>

namespace klab {

std::vector<double> polyfit(std::span<const double> x, std::span<const double> y, int degree, double center,
                            double scale) {
  const auto m = static_cast<Eigen::Index>(x.size());
  if (x.size() != y.size() || degree < 0 || m <= degree) throw Error(ErrorKind::numerical, "polyfit: bad sizes");
  Eigen::MatrixXd A(m, degree + 1);
  Eigen::VectorXd b(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const double s = (x[i] - center) / scale;
    double v = 1.0;
    for (int k = 0; k <= degree; ++k) {
      A(i, k) = v;
      v *= s;
    }
    b(i) = y[i];
  }
  const Eigen::VectorXd c = A.colPivHouseholderQr().solve(b);
  return {c.data(), c.data() + c.size()};
}

double polyfit_derivative(std::span<const double> coeffs, int k, double scale) {
  if (k < 0 || k >= static_cast<int>(coeffs.size())) return 0.0;
  double fact = 1.0;
  for (int i = 2; i <= k; ++i) fact *= i;
  double s = 1.0;
  for (int i = 0; i < k; ++i) s *= scale;
  return coeffs[k] * fact / s;
}

}  // namespace klab
