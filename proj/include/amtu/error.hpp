#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace amtu {

enum class ErrorCode {
  InvalidArgument,
  BehindCamera,
  NoIntersection,
  ImageTooSmall,
  TooManyLevels,
  PyramidMismatch,
  DegenerateBaseline,
  InsufficientCorrespondences,
  DivergedSolve,
  NonPositiveDt,
  StaleMeasurement,
  DimensionMismatch,
  ShapeMismatch,
  LabelOutOfRange,
  CameraBelowGround,
  OutOfGrid,
  NotAdmissible,
  NonFiniteCost,
  ReferenceLengthMismatch,
  IoFailure,
  ParseError,
  NonPositiveInput,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::BehindCamera: return "BehindCamera";
    case ErrorCode::NoIntersection: return "NoIntersection";
    case ErrorCode::ImageTooSmall: return "ImageTooSmall";
    case ErrorCode::TooManyLevels: return "TooManyLevels";
    case ErrorCode::PyramidMismatch: return "PyramidMismatch";
    case ErrorCode::DegenerateBaseline: return "DegenerateBaseline";
    case ErrorCode::InsufficientCorrespondences: return "InsufficientCorrespondences";
    case ErrorCode::DivergedSolve: return "DivergedSolve";
    case ErrorCode::NonPositiveDt: return "NonPositiveDt";
    case ErrorCode::StaleMeasurement: return "StaleMeasurement";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::CameraBelowGround: return "CameraBelowGround";
    case ErrorCode::OutOfGrid: return "OutOfGrid";
    case ErrorCode::NotAdmissible: return "NotAdmissible";
    case ErrorCode::NonFiniteCost: return "NonFiniteCost";
    case ErrorCode::ReferenceLengthMismatch: return "ReferenceLengthMismatch";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::NonPositiveInput: return "NonPositiveInput";
  }
  return "Unknown";
}

/// Every recoverable failure in the library is raised as an Error carrying a
/// machine-checkable code; the message is for humans only.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace amtu
