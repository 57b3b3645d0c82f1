#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gazeswap {

enum class Errc {
    invalid_argument,
    out_of_domain,
    estimation_failed,
    blend_failed,
    no_match,
    not_found,
    conflict,
    parse_error,
    validation_error,
    io_error,
    diverged,
};

constexpr std::string_view to_string(Errc code) {
    switch (code) {
        case Errc::invalid_argument: return "invalid-argument";
        case Errc::out_of_domain: return "out-of-domain";
        case Errc::estimation_failed: return "estimation-failed";
        case Errc::blend_failed: return "blend-failed";
        case Errc::no_match: return "no-match";
        case Errc::not_found: return "not-found";
        case Errc::conflict: return "conflict";
        case Errc::parse_error: return "parse-error";
        case Errc::validation_error: return "validation-error";
        case Errc::io_error: return "io-error";
        case Errc::diverged: return "diverged";
    }
    return "unknown";
}

/// All library failures are reported as `Error` carrying a machine-readable code.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

class BlendError : public Error {
public:
    BlendError(const std::string& what, double residual)
        : Error(Errc::blend_failed, what), residual_(residual) {}

    double residual() const noexcept { return residual_; }

private:
    double residual_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

}  // namespace gazeswap
