#pragma once

#include <stdexcept>
#include <string>

namespace dspp {

/// Thrown when a shape or dimension contract is violated.
class DimensionMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Cholesky factorization failed even after the final jitter escalation.
class NotPositiveDefinite : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  explicit NonFiniteGradient(std::string parameter)
      : std::runtime_error("non-finite gradient for parameter '" + parameter + "'"),
        parameter_(std::move(parameter)) {}

  [[nodiscard]] const std::string& parameter() const { return parameter_; }

 private:
  std::string parameter_;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace dspp
