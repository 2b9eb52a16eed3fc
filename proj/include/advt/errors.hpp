#pragma once

#include <stdexcept>
#include <string>

namespace advt {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes; the message names the op and the shapes involved.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or argument values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A loss or intermediate value became NaN/Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated files.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace advt
