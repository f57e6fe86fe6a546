#pragma once

#include <stdexcept>
#include <string>

namespace pfgan {

// Base of every error thrown by the library. The CLI maps the concrete
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed caller input: out-of-vocabulary symbols, missing targets, empty
// sequences, shape mismatches between a prediction and its target.
class InputError : public Error {
 public:
  using Error::Error;
};

// Inconsistent configuration: dimension mismatches between modules,
// invalid hyperparameter ranges, checkpoint tensors that do not fit a model.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A NaN or Inf appeared at an operation boundary.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Spectral normalization of a (near) zero matrix.
class DegenerateWeightError : public NumericError {
 public:
  using NumericError::NumericError;
};

// The finite-difference oracle saw two different loss values for the same
// parameters, so its comparison would be meaningless.
class OracleInvalidError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class BadMagicError : public IoError {
 public:
  using IoError::IoError;
};

class VersionMismatchError : public IoError {
 public:
  using IoError::IoError;
};

class TruncatedError : public IoError {
 public:
  TruncatedError(const std::string& what, std::string tensor)
      : IoError(what), tensor_(std::move(tensor)) {}

  // Name of the tensor being read when the data ran out (empty when the
  // file ended inside the header).
  const std::string& tensor() const noexcept { return tensor_; }

 private:
  std::string tensor_;
};

}  // namespace pfgan
