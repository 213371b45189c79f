#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pcbal {

enum class ErrorCode {
  ZeroVector,
  DimMismatch,
  NormViolation,
  ManifestInvalid,
  BlobSizeMismatch,
  IoFailure,
  AggregationMismatch,
  IndexOutOfRange,
  BudgetExceedsPool,
  NotADistribution,
  LengthMismatch,
  EmptyInput,
  ShapeMismatch,
  ConfigInvalid,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::NormViolation: return "NormViolation";
    case ErrorCode::ManifestInvalid: return "ManifestInvalid";
    case ErrorCode::BlobSizeMismatch: return "BlobSizeMismatch";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::AggregationMismatch: return "AggregationMismatch";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::BudgetExceedsPool: return "BudgetExceedsPool";
    case ErrorCode::NotADistribution: return "NotADistribution";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
  }
  return "Unknown";
}

// Every failure raised by the library carries one of the codes above so the
// CLI can map it onto an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  // Failures caused by the contents of a dataset or model directory.
  bool is_data_error() const noexcept {
    return code_ == ErrorCode::ManifestInvalid || code_ == ErrorCode::BlobSizeMismatch ||
           code_ == ErrorCode::NormViolation || code_ == ErrorCode::IoFailure;
  }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace pcbal
