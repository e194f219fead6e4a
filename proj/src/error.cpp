#include "pt2pc/error.hpp"

namespace pt2pc {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kMalformedJson: return "malformed_json";
    case ErrorCode::kUnknownLabel: return "unknown_label";
    case ErrorCode::kChildrenOverflow: return "children_overflow";
    case ErrorCode::kBadStructure: return "bad_structure";
    case ErrorCode::kOrdinalOverflow: return "ordinal_overflow";
    case ErrorCode::kShapeMismatch: return "shape_mismatch";
    case ErrorCode::kNonFinite: return "non_finite";
    case ErrorCode::kTapeConsumed: return "tape_consumed";
    case ErrorCode::kInsufficientPoints: return "insufficient_points";
    case ErrorCode::kLeafMismatch: return "leaf_mismatch";
    case ErrorCode::kVocabMismatch: return "vocab_mismatch";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kBadPointCloud: return "bad_point_cloud";
    case ErrorCode::kBadCheckpoint: return "bad_checkpoint";
    case ErrorCode::kMissingMeta: return "missing_meta";
    case ErrorCode::kBadMeta: return "bad_meta";
    case ErrorCode::kMissingTree: return "missing_tree";
    case ErrorCode::kMissingPart: return "missing_part";
    case ErrorCode::kExtraPart: return "extra_part";
    case ErrorCode::kPartSizeMismatch: return "part_size_mismatch";
    case ErrorCode::kNormalization: return "normalization";
    case ErrorCode::kSplitOverlap: return "split_overlap";
    case ErrorCode::kTemplateMismatch: return "template_mismatch";
    case ErrorCode::kCountMismatch: return "count_mismatch";
    case ErrorCode::kUnlabeledSample: return "unlabeled_sample";
  }
  return "unknown";
}

}  // namespace pt2pc
