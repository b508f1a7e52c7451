#pragma once

#include <stdexcept>
#include <string>

namespace rcrank {

enum class ErrorCode {
  InvalidInput,
  InvalidPlan,
  MissingLogField,
  ParseError,
  SchemaError,
  InsufficientData,
  InvalidSpec,
  InvalidConfig,
  DegenerateSpec,
  ShapeError,
  NumericalError,
  InvalidState,
  Unsupported,
  MissingFile,
  Internal,
};

inline const char* error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::InvalidInput: return "InvalidInput";
    case ErrorCode::InvalidPlan: return "InvalidPlan";
    case ErrorCode::MissingLogField: return "MissingLogField";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::DegenerateSpec: return "DegenerateSpec";
    case ErrorCode::ShapeError: return "ShapeError";
    case ErrorCode::NumericalError: return "NumericalError";
    case ErrorCode::InvalidState: return "InvalidState";
    case ErrorCode::Unsupported: return "Unsupported";
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::Internal: return "Internal";
  }
  return "Unknown";
}

class RcError : public std::runtime_error {
 public:
  RcError(ErrorCode code, const std::string& msg)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + msg), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& msg) {
  throw RcError(code, msg);
}

}  // namespace rcrank
