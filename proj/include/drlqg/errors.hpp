#pragma once

#include <stdexcept>
#include <string>

namespace drlqg {

enum class ErrorCode {
    InvalidInput,
    Instability,
    Numeric,
    Conditioning,
    StepTooLarge,
    Unsupported,
    InvalidGradient,
    OracleFailure,
    InvalidInit,
    Stabilizability,
    Detectability,
    InvalidNominal,
};

inline const char* to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidInput: return "invalid-input";
        case ErrorCode::Instability: return "instability";
        case ErrorCode::Numeric: return "numeric";
        case ErrorCode::Conditioning: return "conditioning";
        case ErrorCode::StepTooLarge: return "step-too-large";
        case ErrorCode::Unsupported: return "unsupported";
        case ErrorCode::InvalidGradient: return "invalid-gradient";
        case ErrorCode::OracleFailure: return "oracle-failure";
        case ErrorCode::InvalidInit: return "invalid-init";
        case ErrorCode::Stabilizability: return "stabilizability";
        case ErrorCode::Detectability: return "detectability";
        case ErrorCode::InvalidNominal: return "invalid-nominal";
    }
    return "unknown";
}

/// Every failure raised by the library carries a machine-readable code.
class SolverError : public std::runtime_error {
public:
    SolverError(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
    throw SolverError(code, what);
}

inline void require(bool cond, ErrorCode code, const std::string& what) {
    if (!cond) fail(code, what);
}

}  // namespace drlqg
