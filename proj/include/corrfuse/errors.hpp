#pragma once

#include <stdexcept>
#include <string>

namespace corrfuse {

/// Invalid arguments, malformed input files, or violated parameter
/// constraints.  Maps to process exit code 1 in the command line tool.
class validation_error : public std::runtime_error {
 public:
  explicit validation_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numerical failure: quadrature breakdown, infeasible initialization,
/// calibration target out of reach.  Maps to exit code 2.
class numeric_error : public std::runtime_error {
 public:
  explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// A Markov chain failed its convergence checks.  Maps to exit code 3.
class convergence_error : public std::runtime_error {
 public:
  explicit convergence_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace corrfuse
