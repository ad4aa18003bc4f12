#pragma once

#include <stdexcept>
#include <string>

namespace xdseg {

// Exit-code mapping: ConfigError -> 2, DataError -> 3, IntegrityError -> 4,
// anything else -> 5.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IntegrityError : std::runtime_error {
    explicit IntegrityError(const std::string& msg) : std::runtime_error(msg) {}
};

struct InvalidInput : std::invalid_argument {
    explicit InvalidInput(const std::string& msg) : std::invalid_argument(msg) {}
};

}  // namespace xdseg
