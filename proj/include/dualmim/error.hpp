#pragma once

#include <stdexcept>
#include <string>

namespace dualmim {

enum class ErrorCode {
    missing_file,
    malformed_png,
    unsupported_bit_depth,
    unwritable_path,
    invalid_argument,
    shape_mismatch,
    layout_mismatch,
    invalid_config,
    empty_dataset,
    duplicate_path,
    stale_cache,
    non_finite,
    checkpoint_format,
    label_mismatch,
};

const char* to_string(ErrorCode code) noexcept;

// Every failure in the library is reported through this type; the code
// distinguishes error kinds so callers (and tests) can branch on them.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace dualmim
