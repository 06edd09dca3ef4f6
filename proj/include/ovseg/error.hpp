#pragma once

#include <stdexcept>
#include <string>

namespace ovseg {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller handed in something that violates a precondition.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// File could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// File was readable but its content is malformed.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A versioned file was written by an incompatible format version.
class VersionMismatch : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Exact transport was requested for a problem larger than the configured cap.
class SizeCapExceeded : public Error {
 public:
  using Error::Error;
};

/// Geometry too degenerate for the requested fit (collinear points, empty slices).
class DegenerateGeometry : public Error {
 public:
  using Error::Error;
};

}  // namespace ovseg
