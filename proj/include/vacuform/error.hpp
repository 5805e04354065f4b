#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vacuform {

enum class ErrorCode {
  validation,
  configuration,
  ingestion,
  labeling,
  model,
  training,
  segmentation,
  not_found,
  conflict,
  io,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::validation: return "validation";
    case ErrorCode::configuration: return "configuration";
    case ErrorCode::ingestion: return "ingestion";
    case ErrorCode::labeling: return "labeling";
    case ErrorCode::model: return "model";
    case ErrorCode::training: return "training";
    case ErrorCode::segmentation: return "segmentation";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::conflict: return "conflict";
    case ErrorCode::io: return "io";
  }
  return "unknown";
}

/// Every failure raised by the library. `field` names the offending input
/// (config key, manifest field, CLI flag) when one can be identified.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string message, std::string field = {})
      : std::runtime_error(std::move(message)), code_(code), field_(std::move(field)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& field() const noexcept { return field_; }

  /// Validation-class errors are caller mistakes; everything else is a runtime failure.
  bool is_validation() const noexcept {
    return code_ == ErrorCode::validation || code_ == ErrorCode::ingestion ||
           code_ == ErrorCode::configuration || code_ == ErrorCode::not_found;
  }

 private:
  ErrorCode code_;
  std::string field_;
};

[[noreturn]] inline void fail(ErrorCode code, std::string message, std::string field = {}) {
  throw Error(code, std::move(message), std::move(field));
}

inline void require(bool condition, ErrorCode code, std::string_view message,
                    std::string_view field = {}) {
  if (!condition) throw Error(code, std::string(message), std::string(field));
}

}  // namespace vacuform
