#pragma once

#include <stdexcept>
#include <string>

namespace stmsim {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Out-of-range physical or numerical input. Never clamped silently.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A solver could not produce a trustworthy answer (eigen failure,
/// ill-conditioned boundary system, non-finite FDTD fields, ...).
class SolverError : public Error {
 public:
  explicit SolverError(const std::string& what, double condition = 0.0)
      : Error(what), condition_(condition) {}

  /// Condition-number estimate of the failing system, 0 when not applicable.
  double condition() const noexcept { return condition_; }

 private:
  double condition_;
};

/// Malformed or inconsistent run configuration.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& key, const std::string& what)
      : Error(key.empty() ? what : key + ": " + what), key_(key) {}

  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

}  // namespace stmsim
