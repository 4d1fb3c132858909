#pragma once

#include <stdexcept>
#include <string>

namespace sevilab {

// Invalid model / alignment / generation configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed inputs: shape mismatches, unnormalized rows, bad corpora.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The context window would be exceeded.
class CapacityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A computation produced non-finite values it cannot recover from.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A metric has an empty denominator on the supplied corpus.
class UndefinedMetricError : public InputError {
 public:
  using InputError::InputError;
};

}  // namespace sevilab
