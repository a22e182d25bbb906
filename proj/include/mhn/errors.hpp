#pragma once

#include <stdexcept>
#include <string>

namespace mhn {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape disagreements between tensors or between a tensor and a config.
struct DimensionError : Error {
  using Error::Error;
};

// Invalid model / run configuration, rejected before any compute.
struct ConfigError : Error {
  using Error::Error;
};

// API misuse: non-scalar backward, missing gradients, empty inputs.
struct ContractError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

// Malformed on-disk data; message carries the byte offset when known.
struct FormatError : IoError {
  using IoError::IoError;
};

}  // namespace mhn
