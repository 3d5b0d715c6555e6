#pragma once

#include <span>
#include <vector>

namespace klab {

// Least-squares polynomial in (x - center) / scale; returns c_0..c_degree of
// that scaled variable.
std::vector<double> polyfit(std::span<const double> x, std::span<const double> y, int degree, double center = 0.0,
                            double scale = 1.0);

// k-th derivative at x = center of a polynomial fitted in scaled form.
double polyfit_derivative(std::span<const double> coeffs, int k, double scale = 1.0);

}  // namespace klab
