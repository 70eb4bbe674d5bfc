#pragma once

#include <stdexcept>
#include <string>

namespace persurv {

// Machine-readable failure categories. The CLI reports them verbatim in its
// error JSON, so the names are part of the external interface.
enum class ErrorCode {
  kMissingFile,
  kRaggedRows,
  kInvalidLabel,
  kParseError,
  kInvalidArgument,
  kSingleClassImage,
  kEmptyClassPresent,
  kAllInfiniteField,
  kNonPositiveFactor,
  kNonPositiveSigma,
  kEmptyList,
  kGridMismatch,
  kNoFinitePairs,
  kFewerThanTwoSamples,
  kKTooLarge,
  kNoEvents,
  kDimensionMismatch,
  kNonIdentifiable,
  kMaxIterations,
  kSingularCovariance,
  kAllFitsFailed,
  kEmptyData,
  kInvalidMixture,
};

const char* to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace persurv
