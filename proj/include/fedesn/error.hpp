#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fedesn {

enum class ErrorCode {
  InvalidConfig,
  DegenerateReservoir,
  DimensionMismatch,
  SeriesTooShort,
  EmptyMatrix,
  SingularSystem,
  NotFinite,
  FingerprintMismatch,
  EmptyRound,
  ShapeMismatch,
  IllegalTransition,
  MalformedFrame,
  VersionMismatch,
  Diverged,
  InvalidDelay,
  ParseError,
  RaggedRows,
  NonFinite,
  TooManyClients,
  AllRoundsFailed,
  IoError,
  SchemaError,
  BindError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::DegenerateReservoir: return "DegenerateReservoir";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::SeriesTooShort: return "SeriesTooShort";
    case ErrorCode::EmptyMatrix: return "EmptyMatrix";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::NotFinite: return "NotFinite";
    case ErrorCode::FingerprintMismatch: return "FingerprintMismatch";
    case ErrorCode::EmptyRound: return "EmptyRound";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::IllegalTransition: return "IllegalTransition";
    case ErrorCode::MalformedFrame: return "MalformedFrame";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::Diverged: return "Diverged";
    case ErrorCode::InvalidDelay: return "InvalidDelay";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::RaggedRows: return "RaggedRows";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::TooManyClients: return "TooManyClients";
    case ErrorCode::AllRoundsFailed: return "AllRoundsFailed";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::BindError: return "BindError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (and the wire protocol's `error` frame) can dispatch on it.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail),
        code_(code),
        detail_(detail) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& detail) {
  throw Error(code, detail);
}

inline void require(bool cond, ErrorCode code, const std::string& detail) {
  if (!cond) throw Error(code, detail);
}

}  // namespace fedesn
