#include "persurv/error.hpp"

namespace persurv {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kMissingFile: return "MissingFile";
    case ErrorCode::kRaggedRows: return "RaggedRows";
    case ErrorCode::kInvalidLabel: return "InvalidLabel";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kSingleClassImage: return "SingleClassImage";
    case ErrorCode::kEmptyClassPresent: return "EmptyClassPresent";
    case ErrorCode::kAllInfiniteField: return "AllInfiniteField";
    case ErrorCode::kNonPositiveFactor: return "NonPositiveFactor";
    case ErrorCode::kNonPositiveSigma: return "NonPositiveSigma";
    case ErrorCode::kEmptyList: return "EmptyList";
    case ErrorCode::kGridMismatch: return "GridMismatch";
    case ErrorCode::kNoFinitePairs: return "NoFinitePairs";
    case ErrorCode::kFewerThanTwoSamples: return "FewerThanTwoSamples";
    case ErrorCode::kKTooLarge: return "KTooLarge";
    case ErrorCode::kNoEvents: return "NoEvents";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kNonIdentifiable: return "NonIdentifiable";
    case ErrorCode::kMaxIterations: return "MaxIterations";
    case ErrorCode::kSingularCovariance: return "SingularCovariance";
    case ErrorCode::kAllFitsFailed: return "AllFitsFailed";
    case ErrorCode::kEmptyData: return "EmptyData";
    case ErrorCode::kInvalidMixture: return "InvalidMixture";
  }
  return "Unknown";
}

}  // namespace persurv
