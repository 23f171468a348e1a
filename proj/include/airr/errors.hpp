#pragma once

#include <stdexcept>
#include <string>

namespace airr {

// User-facing failures (bad input, bad files, bad flags) derive from UserError
// so the CLI can map them to exit code 1; everything else is internal.
struct UserError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SchemaError : UserError {
  using UserError::UserError;
};

struct DataError : UserError {
  using UserError::UserError;
};

struct IoError : UserError {
  using UserError::UserError;
};

struct ConfigError : UserError {
  using UserError::UserError;
};

// Violated shape/range precondition on an internal interface.
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

struct EvaluationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct JudgeUnqualifiedError : EvaluationError {
  using EvaluationError::EvaluationError;
};

// Raised by the trainer when a loss term goes NaN/Inf.
struct NonFiniteLossError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace airr
