#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace canids {

/// Error classes raised by the library. The CLI maps each class onto a
/// distinct process exit code (see exit_code()).
enum class ErrorCode {
  IdOutOfRange,
  Parse,
  MalformedHex,
  DlcMismatch,
  Io,
  InvalidSpec,
  InvalidProfile,
  InvalidWindow,
  RateNonPositive,
  InvalidArgument,
  InsufficientData,
  EmptyDataset,
  ShapeMismatch,
  MissingIntermediates,
  NonFiniteLoss,
  VersionMismatch,
  ChecksumMismatch,
  EmptyCalibrationSet,
  AccumulatorOverflow,
  LengthMismatch,
  UnlabeledData,
  ModelMissing,
  NoSamples,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::IdOutOfRange: return "IdOutOfRange";
    case ErrorCode::Parse: return "ParseError";
    case ErrorCode::MalformedHex: return "MalformedHex";
    case ErrorCode::DlcMismatch: return "DlcMismatch";
    case ErrorCode::Io: return "IoError";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::InvalidProfile: return "InvalidProfile";
    case ErrorCode::InvalidWindow: return "InvalidWindow";
    case ErrorCode::RateNonPositive: return "RateNonPositive";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::MissingIntermediates: return "MissingIntermediates";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::EmptyCalibrationSet: return "EmptyCalibrationSet";
    case ErrorCode::AccumulatorOverflow: return "AccumulatorOverflow";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::UnlabeledData: return "UnlabeledData";
    case ErrorCode::ModelMissing: return "ModelMissing";
    case ErrorCode::NoSamples: return "NoSamples";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Parse failure carrying the offending line (1-based, 0 when unknown) and field name.
class ParseError : public Error {
 public:
  ParseError(ErrorCode code, std::size_t line, std::string field, const std::string& detail)
      : Error(code, "line " + std::to_string(line) + ", field '" + field + "': " + detail),
        line_(line),
        field_(std::move(field)) {}

  std::size_t line() const noexcept { return line_; }
  const std::string& field() const noexcept { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

/// Process exit code for an error class; 2 is reserved for usage errors.
inline int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::Io: return 3;
    case ErrorCode::Parse:
    case ErrorCode::MalformedHex:
    case ErrorCode::DlcMismatch:
    case ErrorCode::IdOutOfRange: return 4;
    case ErrorCode::InvalidSpec:
    case ErrorCode::InvalidProfile:
    case ErrorCode::InvalidWindow:
    case ErrorCode::RateNonPositive:
    case ErrorCode::InvalidArgument: return 5;
    case ErrorCode::InsufficientData:
    case ErrorCode::EmptyDataset:
    case ErrorCode::EmptyCalibrationSet:
    case ErrorCode::NoSamples: return 6;
    case ErrorCode::ShapeMismatch:
    case ErrorCode::MissingIntermediates:
    case ErrorCode::LengthMismatch:
    case ErrorCode::UnlabeledData: return 7;
    case ErrorCode::VersionMismatch:
    case ErrorCode::ChecksumMismatch: return 8;
    case ErrorCode::NonFiniteLoss: return 9;
    case ErrorCode::AccumulatorOverflow: return 10;
    case ErrorCode::ModelMissing: return 11;
  }
  return 1;
}

}  // namespace canids
