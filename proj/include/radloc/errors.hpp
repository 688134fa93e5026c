#pragma once

#include <stdexcept>
#include <string>

namespace radloc {

enum class ErrorCode {
  kInvalidArgument,
  kOutOfBounds,
  kSceneBounds,
  kCorruptCheckpoint,
  kDivergence,
  kInsufficientOverlap,
  kDegenerateConfiguration,
  kLocalizationFailure,
  kFrustumMiss,
  kUntrained,
  kIo,
  kConfig,
};

const char* error_code_name(ErrorCode code);

// All library failures are reported through this type; `code()` tells the
// caller which contract was violated.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kOutOfBounds: return "out of bounds";
    case ErrorCode::kSceneBounds: return "scene bounds violation";
    case ErrorCode::kCorruptCheckpoint: return "corrupt checkpoint";
    case ErrorCode::kDivergence: return "divergence";
    case ErrorCode::kInsufficientOverlap: return "insufficient overlap";
    case ErrorCode::kDegenerateConfiguration: return "degenerate configuration";
    case ErrorCode::kLocalizationFailure: return "localization failure";
    case ErrorCode::kFrustumMiss: return "frustum misses scene";
    case ErrorCode::kUntrained: return "untrained model";
    case ErrorCode::kIo: return "io error";
    case ErrorCode::kConfig: return "config error";
  }
  return "error";
}

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace radloc
