#include "mhetd/errors.hpp"

namespace mhetd {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::DegreeMismatch: return "DegreeMismatch";
        case ErrorCode::Unstable: return "Unstable";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::NonFiniteVariance: return "NonFiniteVariance";
        case ErrorCode::NoConvergence: return "NoConvergence";
        case ErrorCode::SingularInformation: return "SingularInformation";
        case ErrorCode::PhiSingular: return "PhiSingular";
        case ErrorCode::NotWarmedUp: return "NotWarmedUp";
        case ErrorCode::InsufficientData: return "InsufficientData";
        case ErrorCode::DegenerateWeights: return "DegenerateWeights";
        case ErrorCode::Config: return "ConfigError";
        case ErrorCode::Io: return "IoError";
    }
    return "Unknown";
}

}  // namespace mhetd
