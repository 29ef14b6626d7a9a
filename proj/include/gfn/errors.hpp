#pragma once

#include <stdexcept>
#include <string>

namespace gfn {

// Dimension or layout mismatch between arguments.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Argument outside its admissible range (non-positive beta, gamma, ...).
struct ParameterError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A file was readable but its contents are malformed (bad magic, version,
// truncation, checksum).
struct FormatError : IoError {
  using IoError::IoError;
};

// Non-finite loss or similar numerical breakdown.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

}  // namespace gfn
