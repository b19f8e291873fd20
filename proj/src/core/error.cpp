#include "hi/core/error.hpp"

namespace hi {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMapping: return "mapping_error";
    case ErrorCode::kEmptyPerson: return "empty_person";
    case ErrorCode::kDegenerateTarget: return "degenerate_target";
    case ErrorCode::kShapeMismatch: return "shape_mismatch";
    case ErrorCode::kOutOfRange: return "out_of_range";
    case ErrorCode::kBackendMissing: return "backend_missing";
    case ErrorCode::kSampleRejected: return "sample_rejected";
    case ErrorCode::kVariantMismatch: return "variant_mismatch";
    case ErrorCode::kNoFace: return "no_face";
    case ErrorCode::kValidation: return "validation_error";
    case ErrorCode::kNonFinite: return "non_finite_loss";
    case ErrorCode::kCountMismatch: return "count_mismatch";
    case ErrorCode::kIo: return "io_error";
    case ErrorCode::kEmptyGeneration: return "empty_generation";
    case ErrorCode::kQueueFull: return "queue_full";
    case ErrorCode::kLayout: return "malformed_layout";
    case ErrorCode::kEmptyDataset: return "empty_dataset";
  }
  return "unknown";
}

}  // namespace hi
