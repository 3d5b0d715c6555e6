#pragma once

#include <stdexcept>
#include <string>

namespace klab {

enum class ErrorKind {
  degenerate_mass,
  invalid_model,
  grid,
  resolution,
  integrability,
  temperature_too_low,
  truncation,
  non_unique_minimum,
  degenerate_hessian,
  positivity,
  quadrature_defect,
  discretization_defect,
  stability,
  window_too_wide,
  numerical,
  schema,
  io,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace klab
