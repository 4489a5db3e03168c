#pragma once

#include <stdexcept>
#include <string>

namespace mvw {

// Error taxonomy mirrors the CLI exit codes: config/usage, data, numerical.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed on-disk artifacts (tensor files, jsonl, manifests).
struct FormatError : DataError {
  using DataError::DataError;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace mvw
