#pragma once

#include <stdexcept>
#include <string>

namespace opbn {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand dimensions do not fit together.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A precondition of an operation was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf appeared where only finite values are allowed.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Input data is missing, malformed or unusable.
class DataError : public Error {
 public:
  using Error::Error;
};

/// A configuration value is unknown or out of range.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace opbn
