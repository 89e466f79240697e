// Exception types shared by all cclab modules.
#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cclab {

// Point outside the working box of a frame, or a stencil leaving the grid.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// C(x) lost full row rank (LIC fails at x).
class SingularFrameError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid user-facing parameter (p <= 1, mismatched grids, bad specifier...).
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Operator evaluated too close to the boundary for its stencil.
class StencilError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Iterative method failed to reach its tolerance. Carries the trace that was
// recorded up to the failure.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, std::vector<double> trace)
      : std::runtime_error(what), trace_(std::move(trace)) {}
  const std::vector<double>& trace() const noexcept { return trace_; }

 private:
  std::vector<double> trace_;
};

// Malformed expression or frame/field definition file.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cclab
