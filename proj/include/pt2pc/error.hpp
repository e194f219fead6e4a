#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pt2pc {

enum class ErrorCode {
  kInvalidArgument,
  kMalformedJson,
  kUnknownLabel,
  kChildrenOverflow,
  kBadStructure,
  kOrdinalOverflow,
  kShapeMismatch,
  kNonFinite,
  kTapeConsumed,
  kInsufficientPoints,
  kLeafMismatch,
  kVocabMismatch,
  kIo,
  kBadPointCloud,
  kBadCheckpoint,
  kMissingMeta,
  kBadMeta,
  kMissingTree,
  kMissingPart,
  kExtraPart,
  kPartSizeMismatch,
  kNormalization,
  kSplitOverlap,
  kTemplateMismatch,
  kCountMismatch,
  kUnlabeledSample,
};

/// Stable machine-readable name, used by the CLI's single-line error output.
std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool cond, ErrorCode code, const std::string& message) {
  if (!cond) throw Error(code, message);
}

}  // namespace pt2pc
