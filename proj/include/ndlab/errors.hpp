#pragma once

#include <stdexcept>
#include <string>

namespace ndlab {

// Base for all library errors. The CLI maps subclasses to exit codes:
// config errors -> 2, training divergence -> 3, I/O -> 4, anything else -> 1.
class NdError : public std::runtime_error {
public:
  explicit NdError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dimension mismatch between operands; message names both shapes.
class ShapeError : public NdError {
public:
  using NdError::NdError;
};

// Invalid scalar argument (tau <= 0, m <= -1, ...).
class ParamError : public NdError {
public:
  using NdError::NdError;
};

// Malformed or inconsistent data (CSV parse failures, empty classes, ...).
class DataError : public NdError {
public:
  using NdError::NdError;
};

// Bad experiment configuration (unknown keys, invalid values).
class ConfigError : public NdError {
public:
  using NdError::NdError;
};

// Non-finite loss or gradient during optimization.
class DivergenceError : public NdError {
public:
  using NdError::NdError;
};

class IoError : public NdError {
public:
  using NdError::NdError;
};

// Zero-norm vector where a direction is required.
class SingularityError : public NdError {
public:
  using NdError::NdError;
};

// API misuse (calling a disabled adapter, mutating a frozen model, ...).
class ContractError : public NdError {
public:
  using NdError::NdError;
};

}  // namespace ndlab
