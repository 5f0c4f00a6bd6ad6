#pragma once

#include <stdexcept>
#include <string>

namespace expt {

/// Process exit codes used by the CLI.
enum class ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfig = 2,
  kNumeric = 3,
  kIo = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

/// Invalid configuration, bad arguments, or inputs violating a precondition.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ExitCode::kConfig, what) {}
};

class InputError : public Error {
 public:
  explicit InputError(const std::string& what) : Error(ExitCode::kConfig, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ExitCode::kNumeric, what) {}
};

/// Cholesky factorization failed even with the largest permitted jitter.
class DegenerateKernelError : public NumericError {
 public:
  DegenerateKernelError(const std::string& what, double last_jitter)
      : NumericError(what), last_jitter_(last_jitter) {}
  double last_jitter() const noexcept { return last_jitter_; }

 private:
  double last_jitter_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ExitCode::kIo, what) {}
};

enum class CheckpointErrorKind { kBadMagic, kVersionMismatch, kCrcMismatch, kTruncated, kMissingTensor };

class CheckpointError : public IoError {
 public:
  CheckpointError(CheckpointErrorKind kind, const std::string& what) : IoError(what), kind_(kind) {}
  CheckpointErrorKind kind() const noexcept { return kind_; }

 private:
  CheckpointErrorKind kind_;
};

}  // namespace expt
