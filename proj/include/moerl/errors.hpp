#pragma once

#include <stdexcept>
#include <string>

namespace moerl {

// Shape or rank mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A precondition of an operation was violated by the caller.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Invalid configuration (bad hyperparameter, unknown key, unsupported option).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A computation produced NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Analysis requested on a run that cannot support it (e.g. usage on an MLP run).
class UnsupportedAnalysis : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace moerl
