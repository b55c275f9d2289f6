#include "dualmim/error.hpp"

namespace dualmim {

const char* to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::missing_file: return "missing file";
        case ErrorCode::malformed_png: return "malformed png";
        case ErrorCode::unsupported_bit_depth: return "unsupported bit depth";
        case ErrorCode::unwritable_path: return "unwritable path";
        case ErrorCode::invalid_argument: return "invalid argument";
        case ErrorCode::shape_mismatch: return "shape mismatch";
        case ErrorCode::layout_mismatch: return "layout mismatch";
        case ErrorCode::invalid_config: return "invalid config";
        case ErrorCode::empty_dataset: return "empty dataset";
        case ErrorCode::duplicate_path: return "duplicate path";
        case ErrorCode::stale_cache: return "stale activation cache";
        case ErrorCode::non_finite: return "non-finite value";
        case ErrorCode::checkpoint_format: return "checkpoint format";
        case ErrorCode::label_mismatch: return "label mismatch";
    }
    return "unknown";
}

}  // namespace dualmim
