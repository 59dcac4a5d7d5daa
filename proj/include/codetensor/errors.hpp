#pragma once

#include <stdexcept>
#include <string>

namespace codetensor {

/// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Bad configuration: unknown key, unparsable or out-of-range value.
/// The CLI maps this to exit code 2.
struct ConfigError : Error {
  using Error::Error;
};

/// Malformed or unusable input data. The CLI maps this to exit code 3.
struct DataError : Error {
  using Error::Error;
};

struct IoError : DataError {
  using DataError::DataError;
};
struct FormatError : DataError {
  using DataError::DataError;
};
struct EmptyBinary : DataError {
  using DataError::DataError;
};
struct ImageTooSmall : DataError {
  using DataError::DataError;
};
struct DegenerateBand : DataError {
  using DataError::DataError;
};
struct DimError : DataError {
  using DataError::DataError;
};
struct ShapeError : DataError {
  using DataError::DataError;
};
struct RankError : DataError {
  using DataError::DataError;
};
struct NoSegments : DataError {
  using DataError::DataError;
};
struct DegenerateLabels : DataError {
  using DataError::DataError;
};
struct NotFitted : DataError {
  using DataError::DataError;
};
struct NoSamples : DataError {
  using DataError::DataError;
};
struct BuildError : DataError {
  using DataError::DataError;
};
struct LayerError : DataError {
  using DataError::DataError;
};
struct SplitError : DataError {
  using DataError::DataError;
};

}  // namespace codetensor
