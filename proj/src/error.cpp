#include "patchforge/error.hpp"

namespace patchforge {

const char* to_string(ErrorCategory category) noexcept {
  switch (category) {
    case ErrorCategory::internal: return "internal";
    case ErrorCategory::usage: return "usage";
    case ErrorCategory::config: return "config";
    case ErrorCategory::io: return "io";
    case ErrorCategory::data: return "data";
    case ErrorCategory::numeric: return "numeric";
    case ErrorCategory::shape: return "shape";
    case ErrorCategory::checkpoint: return "checkpoint";
    case ErrorCategory::model: return "model";
  }
  return "unknown";
}

}  // namespace patchforge
