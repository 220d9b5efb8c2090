#pragma once

#include <stdexcept>
#include <string>

namespace dualde {

// Process exit codes used by the command-line driver.
enum class ExitCode : int {
  kSuccess = 0,
  kConfig = 2,
  kData = 3,
  kDivergence = 4,
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const noexcept { return ExitCode::kData; }
};

// Bad flags, inconsistent run configuration, family/dim mismatches.
class ConfigError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kConfig; }
};

// Unreadable or malformed datasets and checkpoints.
class DataError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf or exploding losses.
class NumericError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kDivergence; }
};

// A zero-length embedding reached the structure loss.
class DegenerateEmbedding : public NumericError {
 public:
  using NumericError::NumericError;
};

// Teacher-side objective requested while the teacher is frozen.
class StageViolation : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

}  // namespace dualde
