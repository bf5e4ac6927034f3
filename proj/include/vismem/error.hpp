#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vismem {

enum class ErrorCode {
  ZeroVector,
  NonFinite,
  DimMismatch,
  FormatError,
  IOError,
  DuplicateId,
  UnknownId,
  EmptyMemory,
  StaleIndex,
  EmptyNeighborSet,
  StaleReport,
  InvalidThreshold,
  EmptySample,
  EmptyCandidate,
  NoChildren,
  UnknownPath,
  DegenerateFit,
  DegenerateResidual,
  InvalidSpec,
  InvalidArgument,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::IOError: return "IOError";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::UnknownId: return "UnknownId";
    case ErrorCode::EmptyMemory: return "EmptyMemory";
    case ErrorCode::StaleIndex: return "StaleIndex";
    case ErrorCode::EmptyNeighborSet: return "EmptyNeighborSet";
    case ErrorCode::StaleReport: return "StaleReport";
    case ErrorCode::InvalidThreshold: return "InvalidThreshold";
    case ErrorCode::EmptySample: return "EmptySample";
    case ErrorCode::EmptyCandidate: return "EmptyCandidate";
    case ErrorCode::NoChildren: return "NoChildren";
    case ErrorCode::UnknownPath: return "UnknownPath";
    case ErrorCode::DegenerateFit: return "DegenerateFit";
    case ErrorCode::DegenerateResidual: return "DegenerateResidual";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

/// Every failure raised by the library. The code identifies the failure
/// class; the message carries the detail (offsets, ids, sizes).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace vismem
