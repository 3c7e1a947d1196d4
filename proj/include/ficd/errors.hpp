#pragma once

#include <stdexcept>
#include <string>

namespace ficd {

// Exception taxonomy mirrored by the CLI exit-code table:
// config -> 2, data/io -> 3, numeric -> 4, shape -> 5.

struct ShapeError : std::invalid_argument {
    explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

struct ConfigError : std::invalid_argument {
    explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace ficd
