#pragma once

#include <stdexcept>
#include <string>

namespace dbsfm {

/// Base class for every error raised by the library. The subclasses map onto
/// the CLI exit codes (see tools/dbsfm.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input too short for the requested operation (e.g. fewer samples than one
/// Welch segment).
class LengthError : public Error {
 public:
  using Error::Error;
};

/// Malformed or out-of-contract input: non-finite samples, empty masks,
/// shape mismatches, missing labels.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of the operation (log of a
/// sub-unity frequency bin).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Non-finite value produced during a computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Operation invoked in the wrong lifecycle state (backward before forward).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Labels that cannot be aligned to the token window grid.
class AlignmentError : public Error {
 public:
  using Error::Error;
};

/// Correlation requested on a constant vector.
class UndefinedCorrelation : public Error {
 public:
  using Error::Error;
};

/// On-disk data that does not follow the expected format (bad magic,
/// truncated payload, malformed CSV/JSON).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Unknown or malformed configuration keys and values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failures: unreadable inputs, unwritable outputs.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace dbsfm
