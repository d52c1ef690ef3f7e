#pragma once

#include <stdexcept>
#include <string>

namespace csasn {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes or dimension arguments.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value (scaling constraint, probabilities, flags).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Batch statistics requested from a batch that cannot provide them.
class DegenerateBatchError : public Error {
 public:
  using Error::Error;
};

// Malformed or missing files: manifests, images, checkpoints, predictions.
class IoError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or gradient during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace csasn
