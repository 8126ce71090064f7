// Copyright Contributors to the splatterlab project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace splatterlab {

enum class ErrorCode {
    NonPositiveDepth,
    SingularCovariance,
    DimensionMismatch,
    BoxOutsideFrustum,
    CameraCenterMismatch,
    NonPositiveScale,
    NonFiniteLoss,
    LengthMismatch,
    ShapeMismatch,
    EmptyMask,
    EmptyOverlap,
    RejectionExhausted,
    IoError,
    InvalidArgument,
};

const char *to_string(ErrorCode code);

// All domain failures are reported through this type; `code()` identifies the
// failure class so callers (and the CLI exit-code mapping) can branch on it.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string &message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

inline const char *to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::NonPositiveDepth: return "NonPositiveDepth";
    case ErrorCode::SingularCovariance: return "SingularCovariance";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::BoxOutsideFrustum: return "BoxOutsideFrustum";
    case ErrorCode::CameraCenterMismatch: return "CameraCenterMismatch";
    case ErrorCode::NonPositiveScale: return "NonPositiveScale";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::EmptyOverlap: return "EmptyOverlap";
    case ErrorCode::RejectionExhausted: return "RejectionExhausted";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    }
    return "Unknown";
}

} // namespace splatterlab
