#pragma once

#include <stdexcept>
#include <string>

namespace sbw {

/// Input rejected before any numerics ran (maps to CLI exit code 1).
class ValidationError : public std::invalid_argument {
public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

/// Numerical failure: divergence, blow-up, non-finite state (CLI exit code 2).
class NumericalError : public std::runtime_error {
public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace sbw
