#ifndef HIERSEG_ERRORS_HPP
#define HIERSEG_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace hierseg {

// Bad config file, unknown key, invalid flag combination. CLI exit code 2.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or inconsistent data: class maps, trees, masks, annotations.
// CLI exit code 3.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite loss or other numeric failure during optimisation. CLI exit code 4.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace hierseg

#endif
