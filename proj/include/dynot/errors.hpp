#pragma once

#include <stdexcept>
#include <string>

namespace dynot {

/// A computation produced NaN or infinity. Training treats this as a
/// diverged evaluation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation (t outside [0,1],
/// a point outside the support of a density, mismatched dimensions).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Invalid experiment or problem configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace dynot
