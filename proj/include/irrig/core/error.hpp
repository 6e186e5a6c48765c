#pragma once

#include <stdexcept>
#include <string>

namespace irrig {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent file contents (schema, truncation, versions).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Array or raster shapes that do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Precondition violations on numeric inputs (empty series, singular systems, ...).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace irrig
