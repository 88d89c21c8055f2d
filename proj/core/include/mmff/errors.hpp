#pragma once

#include <stdexcept>
#include <string>

namespace mmff {

// Error taxonomy. Everything is an MmffError so callers can catch the
// whole family at the CLI boundary and map it to an exit code.
struct MmffError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes (matmul inner dims, kernel vs input, ...).
struct DimensionError : MmffError {
  using MmffError::MmffError;
};

// Invalid argument values (non-positive sizes, unknown enum tags, ...).
struct ArgumentError : MmffError {
  using MmffError::MmffError;
};

// Model/config-level inconsistency (head width mismatch, bad config key).
struct ConfigError : MmffError {
  using MmffError::MmffError;
};

// NaN or Inf produced or ingested; raised eagerly, never propagated.
struct NumericError : MmffError {
  using MmffError::MmffError;
};

// Violated API contract (non-scalar backward, optimizer state mismatch).
struct ContractError : MmffError {
  using MmffError::MmffError;
};

// Dataset loading failures; message names the offending sample or file.
struct IngestError : MmffError {
  using MmffError::MmffError;
};

}  // namespace mmff
