#pragma once

#include <stdexcept>
#include <string>

namespace hern {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Spatial dimensions violate a divisibility or parity requirement.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Tensor shapes or channel counts do not match.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A scalar argument is out of its valid range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Invalid run configuration, model configuration or schedule.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File could not be read, written or parsed.
class IoError : public Error {
 public:
  using Error::Error;
};

/// NaN or infinity appeared during optimization.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace hern
