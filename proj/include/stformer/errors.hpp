#pragma once

#include <stdexcept>
#include <string>

namespace stf {

/// Shape or extent mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A NaN or infinity appeared where only finite values are allowed.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A softmax row had every position masked out.
class DegenerateMaskError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Invalid model, training or run configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Unreadable, malformed or inconsistent input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A metric that is not defined for the given sample, e.g. AUC with a
/// single class present.
class UndefinedMetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace stf
