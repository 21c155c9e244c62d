#pragma once

#include <stdexcept>
#include <string>

namespace nfce {

// Error categories map 1:1 onto CLI exit codes: validation -> 1,
// numeric -> 2, i/o (including format/corruption) -> 3.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& msg) : Error(msg) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error(msg) {}
};

namespace detail {
[[noreturn]] inline void fail_validation(const std::string& what) {
    throw ValidationError(what);
}
}  // namespace detail

// Precondition check used at public API boundaries.
#define NFCE_REQUIRE(cond, msg)                                      \
    do {                                                             \
        if (!(cond)) ::nfce::detail::fail_validation(std::string(msg)); \
    } while (0)

}  // namespace nfce
