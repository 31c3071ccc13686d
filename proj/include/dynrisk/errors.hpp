#pragma once

#include <stdexcept>
#include <string>

namespace dynrisk {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid model or risk parameters (alpha outside (0,1], negative beta, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Dimension or structure mismatch between collaborating objects.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Object used in the wrong state, e.g. backward without a matching forward.
class StateError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an operation precondition.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// Stepping an environment whose episode already ended.
class EpisodeComplete : public Error {
 public:
  using Error::Error;
};

/// Configuration or input-file problems. Maps to CLI exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values, solver non-convergence. Maps to CLI exit code 3.
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what, double residual = 0.0)
      : Error(what), residual_(residual) {}

  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

}  // namespace dynrisk
