#pragma once

#include <stdexcept>
#include <string>

namespace kamp {

/// Bad user input: malformed parameters, files, or flags.
class ValidationError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// A numerical routine failed to converge or hit an inadmissible region.
class NumericalError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// The state-evolution solution collapsed onto tau -> 0+.
class BoundaryError : public NumericalError {
public:
  using NumericalError::NumericalError;
};

/// Requested FDP level lies outside the range reachable along the curve.
class UnattainableTargetError : public NumericalError {
public:
  UnattainableTargetError(const std::string &what, double lo, double hi)
      : NumericalError(what), lowest(lo), highest(hi) {}
  double lowest;
  double highest;
};

/// Solver failure tied to one penalty value of a sweep.
class LambdaFailure : public NumericalError {
public:
  LambdaFailure(const std::string &what, double lam) : NumericalError(what), lambda(lam) {}
  double lambda;
};

inline void require(bool ok, const std::string &msg) {
  if (!ok) {
    throw ValidationError(msg);
  }
}

} // namespace kamp
