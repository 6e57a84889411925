#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace qlab {

enum class ErrorKind {
  NotPositiveDefinite,
  NotSymmetric,
  LengthMismatch,
  DegenerateInput,
  EmptyInput,
  NonFiniteInput,
  ShapeMismatch,
  DimMismatch,
  DegenerateCalibration,
  InsufficientData,
  WrongLanguageCount,
  ContextOverflow,
  UnknownProjection,
  EmptyStream,
  VocabMismatch,
  TokenizerMismatch,
  NonPositivePpl,
  IoError,
  FormatError,
  ConfigError,
};

std::string_view to_string(ErrorKind kind);

// Process exit code class for a failure: 2 config, 3 data, 4 numeric.
int exit_code_for(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind), message_(message) {}

  ErrorKind kind() const noexcept { return kind_; }
  // Without the kind prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorKind kind_;
  std::string message_;
};

}  // namespace qlab
