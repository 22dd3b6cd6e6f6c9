#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ofmpc {

enum class ErrorCode {
    invalid_input,
    dimension_mismatch,
    degenerate_pivot,
    not_psd,
    invalid_sigma,
    search_failure,
    no_valid_multiplier,
    infeasible,
    numerical_failure,
    c_not_canonical,
    ru_not_pd,
    io_error,
    version_mismatch,
    parse_error,
};

inline std::string_view to_string(ErrorCode code)
{
    switch (code) {
    case ErrorCode::invalid_input: return "invalid-input";
    case ErrorCode::dimension_mismatch: return "dimension-mismatch";
    case ErrorCode::degenerate_pivot: return "degenerate-pivot";
    case ErrorCode::not_psd: return "not-psd";
    case ErrorCode::invalid_sigma: return "invalid-sigma";
    case ErrorCode::search_failure: return "search-failure";
    case ErrorCode::no_valid_multiplier: return "no-valid-multiplier";
    case ErrorCode::infeasible: return "infeasible";
    case ErrorCode::numerical_failure: return "numerical-failure";
    case ErrorCode::c_not_canonical: return "C-not-canonical";
    case ErrorCode::ru_not_pd: return "R_u-not-PD";
    case ErrorCode::io_error: return "io-error";
    case ErrorCode::version_mismatch: return "version-mismatch";
    case ErrorCode::parse_error: return "parse-error";
    }
    return "unknown";
}

/// Exception carrying a machine-readable code next to the message.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what)
        , code_(code)
    {
    }

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

} // namespace ofmpc
