#pragma once

#include <stdexcept>
#include <string>

namespace volbench {

// Each category maps to one CLI exit code.

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FitFailure : public NumericFailure {
 public:
  using NumericFailure::NumericFailure;
};

}  // namespace volbench
