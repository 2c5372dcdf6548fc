#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ccprompt {

enum class ErrorCode {
  IndexOutOfRange,
  IdenticalPair,
  DegenerateSubspace,
  DimensionMismatch,
  InvalidM,
  InvalidGold,
  EmptySequence,
  LengthOverflow,
  ZeroVector,
  ParseError,
  UnknownLabel,
  SpanOutOfBounds,
  LengthMismatch,
  EmptySelection,
  DegenerateDirection,
  ConfigError,
  DataError,
  NumericFailure,
  IoError,
};

std::string_view to_string(ErrorCode code);

/// Single exception type for the library; `code()` distinguishes the failure.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::IdenticalPair: return "IdenticalPair";
    case ErrorCode::DegenerateSubspace: return "DegenerateSubspace";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::InvalidM: return "InvalidM";
    case ErrorCode::InvalidGold: return "InvalidGold";
    case ErrorCode::EmptySequence: return "EmptySequence";
    case ErrorCode::LengthOverflow: return "LengthOverflow";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::UnknownLabel: return "UnknownLabel";
    case ErrorCode::SpanOutOfBounds: return "SpanOutOfBounds";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::EmptySelection: return "EmptySelection";
    case ErrorCode::DegenerateDirection: return "DegenerateDirection";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::DataError: return "DataError";
    case ErrorCode::NumericFailure: return "NumericFailure";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) throw Error(code, what);
}

}  // namespace ccprompt
