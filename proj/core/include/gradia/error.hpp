#pragma once

#include <stdexcept>
#include <string>

namespace gradia {

// Base of every error raised by the library. Subclasses map onto the
// failure classes the tools report (config, input, data, ...).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid model, scene, training or workbench configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed arguments: shape mismatches, out-of-range indices or thresholds.
class InputError : public Error {
 public:
  using Error::Error;
};

// Inconsistent data: duplicate ids, missing masks, undersized pools.
class DataError : public Error {
 public:
  using Error::Error;
};

// A metric whose denominator is empty (no instances, single-class labels).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

// Optimization produced a non-finite loss.
class TrainingError : public Error {
 public:
  using Error::Error;
};

// Scene rendering could not place glyphs within the retry budget.
class GenerationError : public Error {
 public:
  using Error::Error;
};

// A requested differentiation mode is not supported.
class CapabilityError : public Error {
 public:
  using Error::Error;
};

}  // namespace gradia
