#pragma once

#include <stdexcept>
#include <string>

namespace rdlr {

/// Base class for failures of a numerical procedure (CLI exit code 3).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Adaptive step size collapsed; the problem is too stiff for the chosen solver.
class StiffnessError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// A solver was asked to exploit structure the problem does not carry.
class UnsupportedStructure : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Adaptive range estimation exceeded its basis-size cap.
class NonConvergence : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Poisson solve received a charge density with non-zero mean.
class GaugeError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Invalid experiment configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rdlr
