#pragma once

#include <stdexcept>
#include <string>

namespace relay {

/// Base class for every domain error raised by the library. The CLI maps any
/// `relay::Error` to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class ConsistencyError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

class UnsolvableError : public Error {
 public:
  using Error::Error;
};

class AmbiguityError : public Error {
 public:
  using Error::Error;
};

class MissingAnnotationError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

class InvariantError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  NumericError(const std::string& what, int layer)
      : Error(what), layer_(layer) {}
  explicit NumericError(const std::string& what) : Error(what) {}

  /// Layer index where the non-finite value appeared, -1 when not layer-bound.
  int layer() const noexcept { return layer_; }

 private:
  int layer_ = -1;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class EmptySetError : public Error {
 public:
  using Error::Error;
};

}  // namespace relay
