#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace maskdm {

// Root of every error the library raises.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Operand shapes do not conform to the operation.
class ShapeError : public Error {
public:
    using Error::Error;
};

// A NaN or Inf appeared where finite values are required.
class NumericsError : public Error {
public:
    using Error::Error;
};

// A caller violated a documented precondition.
class ContractError : public Error {
public:
    using Error::Error;
};

// Invalid configuration value. `line` is 0 when not tied to a config file.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what, std::size_t line = 0)
        : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

// Every token of an image would be hidden.
class FullMaskError : public Error {
public:
    using Error::Error;
};

// Malformed or incompatible file contents.
class FormatError : public Error {
public:
    using Error::Error;
};

}  // namespace maskdm
