#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace soapbench {

enum class ErrorCode {
  kEmptyNote,
  kNoAssessment,
  kMalformedRecord,
  kDuplicateEncounter,
  kEmptyCorpus,
  kProviderUnavailable,
  kDimMismatch,
  kProviderMismatch,
  kEmptyText,
  kZeroVector,
  kAllProvidersFailed,
  kCssParseFailure,
  kBackendError,
  kBackendExhausted,
  kDomainError,
  kMissingDecision,
  kEmptyInput,
  kIoError,
  kUnknownEncounter,
  kAlreadyReviewed,
  kInvalidCategory,
  kStoreLocked,
  kConfigError,
  kPortInUse,
  kMissingReport,
};

std::string_view error_name(ErrorCode code);

// All library failures surface as this one exception type; callers branch on
// code() rather than on a class hierarchy.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_name(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kEmptyNote: return "EmptyNote";
    case ErrorCode::kNoAssessment: return "NoAssessment";
    case ErrorCode::kMalformedRecord: return "MalformedRecord";
    case ErrorCode::kDuplicateEncounter: return "DuplicateEncounter";
    case ErrorCode::kEmptyCorpus: return "EmptyCorpus";
    case ErrorCode::kProviderUnavailable: return "ProviderUnavailable";
    case ErrorCode::kDimMismatch: return "DimMismatch";
    case ErrorCode::kProviderMismatch: return "ProviderMismatch";
    case ErrorCode::kEmptyText: return "EmptyText";
    case ErrorCode::kZeroVector: return "ZeroVector";
    case ErrorCode::kAllProvidersFailed: return "AllProvidersFailed";
    case ErrorCode::kCssParseFailure: return "CssParseFailure";
    case ErrorCode::kBackendError: return "BackendError";
    case ErrorCode::kBackendExhausted: return "BackendExhausted";
    case ErrorCode::kDomainError: return "DomainError";
    case ErrorCode::kMissingDecision: return "MissingDecision";
    case ErrorCode::kEmptyInput: return "EmptyInput";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kUnknownEncounter: return "UnknownEncounter";
    case ErrorCode::kAlreadyReviewed: return "AlreadyReviewed";
    case ErrorCode::kInvalidCategory: return "InvalidCategory";
    case ErrorCode::kStoreLocked: return "StoreLocked";
    case ErrorCode::kConfigError: return "ConfigError";
    case ErrorCode::kPortInUse: return "PortInUse";
    case ErrorCode::kMissingReport: return "MissingReport";
  }
  return "Unknown";
}

}  // namespace soapbench
