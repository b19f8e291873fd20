#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hi {

enum class ErrorCode {
  kMapping,
  kEmptyPerson,
  kDegenerateTarget,
  kShapeMismatch,
  kOutOfRange,
  kBackendMissing,
  kSampleRejected,
  kVariantMismatch,
  kNoFace,
  kValidation,
  kNonFinite,
  kCountMismatch,
  kIo,
  kEmptyGeneration,
  kQueueFull,
  kLayout,
  kEmptyDataset,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries a machine-readable code so the
/// service layer can map it onto a structured response.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace hi
