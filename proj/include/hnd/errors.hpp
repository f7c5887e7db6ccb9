#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hnd {

enum class ErrorCode {
  Io,
  ParseError,
  MissingMask,
  EmptyMask,
  UnknownConcept,
  UnknownCategory,
  UnknownImage,
  DimensionMismatch,
  DegenerateLandmarks,
  BadMagic,
  VersionUnsupported,
  TruncatedFile,
  NonFiniteValue,
  EmptySelection,
  UnknownClassLabel,
  SpecInvalid,
  MismatchedRun,
  InvalidArgument,
  Internal,
};

// Coarse grouping used for process exit codes.
enum class ErrorCategory { Io, Validation, Internal };

std::string_view to_string(ErrorCode code);
ErrorCategory category_of(ErrorCode code);

// Exit code for a failed CLI run: I/O=2, validation=3, internal=4.
int exit_code_for(ErrorCategory category);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }
  ErrorCategory category() const noexcept { return category_of(code_); }

 private:
  ErrorCode code_;
};

}  // namespace hnd
