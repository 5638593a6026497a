#pragma once

#include <stdexcept>
#include <string>

namespace nmt {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes do not conform for the requested operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// An id or position lies outside the valid range.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// Invalid hyperparameters or pipeline settings.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// An API was called in a way its contract forbids.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Input data violates a model limit (e.g. sequence too long).
class InputError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered in a loss or gradient, or an all-masked softmax row.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed file (checkpoint, vocabulary, stats, log).
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace nmt
