#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace timeleak {

enum class ErrorCode {
  kMissingTimeColumn,
  kMalformedHeader,
  kNonNumericCell,
  kSecretValueOutOfDomain,
  kInvalidSchema,
  kDatasetTooSmall,
  kEmptyClauseList,
  kTooFewSecretBits,
  kInvalidArgument,
  kDimensionMismatch,
  kNonFiniteLoss,
  kSchemaVersionMismatch,
  kParseError,
  kIoError,
  kZeroInterfaceWidth,
  kDomainTooLarge,
  kIncompleteCensus,
  kEmptyCensus,
  kInconsistentInputs,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMissingTimeColumn: return "MissingTimeColumn";
    case ErrorCode::kMalformedHeader: return "MalformedHeader";
    case ErrorCode::kNonNumericCell: return "NonNumericCell";
    case ErrorCode::kSecretValueOutOfDomain: return "SecretValueOutOfDomain";
    case ErrorCode::kInvalidSchema: return "InvalidSchema";
    case ErrorCode::kDatasetTooSmall: return "DatasetTooSmall";
    case ErrorCode::kEmptyClauseList: return "EmptyClauseList";
    case ErrorCode::kTooFewSecretBits: return "TooFewSecretBits";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::kSchemaVersionMismatch: return "SchemaVersionMismatch";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kZeroInterfaceWidth: return "ZeroInterfaceWidth";
    case ErrorCode::kDomainTooLarge: return "DomainTooLarge";
    case ErrorCode::kIncompleteCensus: return "IncompleteCensus";
    case ErrorCode::kEmptyCensus: return "EmptyCensus";
    case ErrorCode::kInconsistentInputs: return "InconsistentInputs";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so the
/// CLI can map it to an exit status without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace timeleak
