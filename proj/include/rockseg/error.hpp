#pragma once

#include <stdexcept>
#include <string>

namespace rockseg {

enum class ErrorCode {
    io,
    dimension_mismatch,
    bounds,
    parameter,
    unsupported_format,
    degenerate_histogram,
    infeasible,
    conditioning,
    empty_region,
    range_overlap,
    coordinate,
    validation,
    cancelled,
};

const char* to_string(ErrorCode code);

// Every library failure is reported through this exception; the code lets the
// CLI and the HTTP layer map it onto exit statuses / response codes.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
    throw Error(code, what);
}

}  // namespace rockseg
