#ifndef GSC_ERROR_HPP
#define GSC_ERROR_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace gsc {

enum class ErrorCode {
  dimension,
  index,
  non_finite,
  degenerate_gradient,
  smoothness_undefined,
  insufficient_calibration,
  undefined_ratio,
  invalid_argument,
  config,
  // data/container errors
  missing_file,
  length_mismatch,
  dim_mismatch,
  unknown_activation,
  version_mismatch,
  malformed_manifest,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::dimension: return "dimension";
    case ErrorCode::index: return "index";
    case ErrorCode::non_finite: return "non_finite";
    case ErrorCode::degenerate_gradient: return "degenerate_gradient";
    case ErrorCode::smoothness_undefined: return "smoothness_undefined";
    case ErrorCode::insufficient_calibration: return "insufficient_calibration";
    case ErrorCode::undefined_ratio: return "undefined_ratio";
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::config: return "config";
    case ErrorCode::missing_file: return "missing_file";
    case ErrorCode::length_mismatch: return "length_mismatch";
    case ErrorCode::dim_mismatch: return "dim_mismatch";
    case ErrorCode::unknown_activation: return "unknown_activation";
    case ErrorCode::version_mismatch: return "version_mismatch";
    case ErrorCode::malformed_manifest: return "malformed_manifest";
  }
  return "unknown";
}

/// True for errors caused by the input container rather than by numerics.
constexpr bool is_data_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::missing_file:
    case ErrorCode::length_mismatch:
    case ErrorCode::dim_mismatch:
    case ErrorCode::unknown_activation:
    case ErrorCode::version_mismatch:
    case ErrorCode::malformed_manifest:
    case ErrorCode::config:
      return true;
    default:
      return false;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace gsc

#endif  // GSC_ERROR_HPP
