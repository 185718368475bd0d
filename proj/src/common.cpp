#include "mvd/common.hpp"

namespace mvd {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::BehindCamera: return "BehindCamera";
    case ErrorCode::NonPositiveDepth: return "NonPositiveDepth";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::DegenerateRay: return "DegenerateRay";
    case ErrorCode::InvalidCamera: return "InvalidCamera";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::StepOutOfRange: return "StepOutOfRange";
    case ErrorCode::InvalidBounds: return "InvalidBounds";
    case ErrorCode::InvalidRadius: return "InvalidRadius";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::CorruptManifest: return "CorruptManifest";
    case ErrorCode::CorruptCheckpoint: return "CorruptCheckpoint";
    case ErrorCode::TooSmall: return "TooSmall";
    case ErrorCode::EmptyCloud: return "EmptyCloud";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
  }
  return "Unknown";
}

}  // namespace mvd
