#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace iafm {

enum class ErrorCode {
  EmptyId,
  NegativeTimestamp,
  UnknownExerciseType,
  MalformedRow,
  SchemaMismatch,
  DecodeError,
  EmptyDataset,
  EmptyInput,
  InvalidParameter,
  UnknownFactorLevel,
  InnerDivergence,
  OracleTooLarge,
  UnknownStudent,
  ArityMismatch,
  MissingModels,
  Io,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyId: return "EmptyId";
    case ErrorCode::NegativeTimestamp: return "NegativeTimestamp";
    case ErrorCode::UnknownExerciseType: return "UnknownExerciseType";
    case ErrorCode::MalformedRow: return "MalformedRow";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
    case ErrorCode::DecodeError: return "DecodeError";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::InvalidParameter: return "InvalidParameter";
    case ErrorCode::UnknownFactorLevel: return "UnknownFactorLevel";
    case ErrorCode::InnerDivergence: return "InnerDivergence";
    case ErrorCode::OracleTooLarge: return "OracleTooLarge";
    case ErrorCode::UnknownStudent: return "UnknownStudent";
    case ErrorCode::ArityMismatch: return "ArityMismatch";
    case ErrorCode::MissingModels: return "MissingModels";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above plus a
/// detail string naming the offending field, row, or student.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail),
        code_(code),
        detail_(std::move(detail)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace iafm
