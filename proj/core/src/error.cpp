// SPDX-License-Identifier: Apache-2.0
#include "gbt/error.hpp"

namespace gbt {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kZeroDirection: return "ZeroDirection";
    case ErrorCode::kOutOfBounds: return "OutOfBounds";
    case ErrorCode::kIndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kNonCanonicalPoses: return "NonCanonicalPoses";
    case ErrorCode::kInsufficientViews: return "InsufficientViews";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kBadMagic: return "BadMagic";
    case ErrorCode::kUnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::kShapeMismatchOnLoad: return "ShapeMismatchOnLoad";
    case ErrorCode::kNumericFailure: return "NumericFailure";
  }
  return "Unknown";
}

}  // namespace gbt
