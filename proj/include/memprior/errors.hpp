#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace memprior {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape mismatch, out-of-range parameter, malformed input.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A noise schedule evaluated to a zero or negative width.
class DegenerateSchedule : public Error {
 public:
  using Error::Error;
};

class UnsupportedDimension : public Error {
 public:
  using Error::Error;
};

/// Nonphysical model handed to the wave solver (e.g. nonpositive slowness).
class InvalidModel : public Error {
 public:
  using Error::Error;
};

/// Sparse factorization or solve failed; message carries the diagnostic.
class SolverFailure : public Error {
 public:
  using Error::Error;
};

/// An invariant that should hold by construction did not (e.g. an indefinite
/// posterior covariance). Signals a bug upstream, usually in a Jacobian.
class InternalConsistency : public Error {
 public:
  using Error::Error;
};

/// Iterative procedure (training, reverse diffusion) produced a non-finite
/// state at a given step.
class StepFailure : public Error {
 public:
  StepFailure(const std::string& what, std::size_t step)
      : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace memprior
