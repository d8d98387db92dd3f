#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mhetd {

enum class ErrorCode {
    DegreeMismatch,
    Unstable,
    DimensionMismatch,
    InvalidArgument,
    NonFiniteVariance,
    NoConvergence,
    SingularInformation,
    PhiSingular,
    NotWarmedUp,
    InsufficientData,
    DegenerateWeights,
    Config,
    Io,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Single exception type for the library; the code tells callers (and the
/// CLI exit-status mapping) which contract was violated.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }

    /// Configuration and IO problems are user errors; everything else is numerical.
    [[nodiscard]] bool is_config_error() const noexcept {
        return code_ == ErrorCode::Config || code_ == ErrorCode::Io;
    }

private:
    ErrorCode code_;
};

}  // namespace mhetd
