#include "hnd/errors.hpp"

namespace hnd {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::Io: return "Io";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::MissingMask: return "MissingMask";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::UnknownConcept: return "UnknownConcept";
    case ErrorCode::UnknownCategory: return "UnknownCategory";
    case ErrorCode::UnknownImage: return "UnknownImage";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::DegenerateLandmarks: return "DegenerateLandmarks";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::VersionUnsupported: return "VersionUnsupported";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::EmptySelection: return "EmptySelection";
    case ErrorCode::UnknownClassLabel: return "UnknownClassLabel";
    case ErrorCode::SpecInvalid: return "SpecInvalid";
    case ErrorCode::MismatchedRun: return "MismatchedRun";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Internal: return "Internal";
  }
  return "Unknown";
}

ErrorCategory category_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::Io:
    case ErrorCode::TruncatedFile:
      return ErrorCategory::Io;
    case ErrorCode::Internal:
      return ErrorCategory::Internal;
    default:
      return ErrorCategory::Validation;
  }
}

int exit_code_for(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::Io: return 2;
    case ErrorCategory::Validation: return 3;
    case ErrorCategory::Internal: return 4;
  }
  return 4;
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

}  // namespace hnd
