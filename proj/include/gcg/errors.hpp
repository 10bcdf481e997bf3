#pragma once

#include <stdexcept>
#include <string>

namespace gcg {

/// Base class for every error raised by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Shape or axis mismatch between tensors. Messages name the offending axis.
struct DimensionError : Error {
  using Error::Error;
};

/// A call-site precondition was violated (non-scalar loss, non-one-hot
/// target, ...).
struct ContractError : Error {
  using Error::Error;
};

/// Invalid configuration value or combination.
struct ConfigError : Error {
  using Error::Error;
};

/// Dataset or manifest content problem (missing image, bad label, ...).
struct DataError : Error {
  using Error::Error;
};

/// File IO or parse failure. Messages include the byte offset when parsing
/// a binary format.
struct IoError : Error {
  using Error::Error;
};

/// Checkpoint carries an unsupported format version.
struct CheckpointVersionError : IoError {
  using IoError::IoError;
};

/// Non-finite value where the math requires a finite one (NaN gradient).
struct NumericError : Error {
  using Error::Error;
};

} // namespace gcg
