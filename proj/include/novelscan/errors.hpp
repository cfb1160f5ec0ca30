#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace novelscan {

enum class ErrorKind {
  invalid_argument,
  degenerate_data,
  calibration_failure,
  numerical,
  convergence_failure,
  fit_failure,
  io,
  config,
};

/// Base for every error raised by the library. The kind decides the CLI exit
/// code; the message carries the diagnostics.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& what) : Error(ErrorKind::invalid_argument, what) {}
};

class DegenerateData : public Error {
 public:
  explicit DegenerateData(const std::string& what) : Error(ErrorKind::degenerate_data, what) {}
};

class CalibrationFailure : public Error {
 public:
  explicit CalibrationFailure(const std::string& what)
      : Error(ErrorKind::calibration_failure, what) {}
};

/// Overflow, non-finite values, failed factorizations.
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(ErrorKind::numerical, what) {}
};

class ConvergenceFailure : public Error {
 public:
  ConvergenceFailure(const std::string& what, double grad_norm)
      : Error(ErrorKind::convergence_failure, what), grad_norm_(grad_norm) {}
  double grad_norm() const noexcept { return grad_norm_; }

 private:
  double grad_norm_;
};

class FitFailure : public Error {
 public:
  explicit FitFailure(const std::string& what) : Error(ErrorKind::fit_failure, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

/// Rethrows `e` with `context` prepended to the message, keeping its kind.
[[noreturn]] inline void rethrow_with_context(const Error& e, const std::string& context) {
  const std::string what = context + ": " + e.what();
  switch (e.kind()) {
    case ErrorKind::invalid_argument: throw InvalidArgument(what);
    case ErrorKind::degenerate_data: throw DegenerateData(what);
    case ErrorKind::calibration_failure: throw CalibrationFailure(what);
    case ErrorKind::numerical: throw NumericalError(what);
    case ErrorKind::convergence_failure: {
      const auto* c = dynamic_cast<const ConvergenceFailure*>(&e);
      throw ConvergenceFailure(what, c ? c->grad_norm() : 0.0);
    }
    case ErrorKind::fit_failure: throw FitFailure(what);
    case ErrorKind::io: throw IoError(what);
    case ErrorKind::config: throw ConfigError(what);
  }
  throw Error(e.kind(), what);
}

/// Exit codes of the command-line driver.
inline int exit_code(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::config:
    case ErrorKind::invalid_argument:
      return 2;
    case ErrorKind::io:
      return 4;
    default:
      return 3;
  }
}

}  // namespace novelscan
