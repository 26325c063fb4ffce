#pragma once

#include <stdexcept>
#include <string>

namespace nlaic {

// Violated shape or layout invariant (mismatched channels, inner dims, ...).
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Caller broke a documented precondition.
struct ContractError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Invalid layer/model configuration (even kernel, bad channel count, ...).
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Math domain violation, e.g. log of a non-positive value.
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

// Entropy decoder ran out of input or hit an impossible state.
struct DecodeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed file: bad magic, version, CRC, CSV syntax...
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct VersionError : FormatError {
  using FormatError::FormatError;
};

// Stored checksum does not match the data.
struct ChecksumError : FormatError {
  using FormatError::FormatError;
};

// Container was produced with a different checkpoint.
struct ModelMismatchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite value.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace nlaic
