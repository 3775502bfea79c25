#pragma once

#include <stdexcept>
#include <string>

namespace sevad {

// Invalid configuration or malformed input file. CLI maps this to exit code 2.
class config_error : public std::runtime_error {
public:
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Violation of a session protocol (stepping an ended session, audio after end).
class protocol_error : public std::runtime_error {
public:
    explicit protocol_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values produced during inference or training.
class numeric_error : public std::runtime_error {
public:
    numeric_error(const std::string& msg, std::string parameter)
        : std::runtime_error(msg), parameter_name(std::move(parameter)) {}
    std::string parameter_name;
};

// Corrupt or truncated serialized payload. Carries the byte offset at which
// parsing failed.
class parse_error : public std::runtime_error {
public:
    parse_error(const std::string& msg, size_t at_offset)
        : std::runtime_error(msg + " (offset " + std::to_string(at_offset) + ")"),
          offset(at_offset) {}
    size_t offset;
};

// Input too small for the operation (e.g. an encoder chunk below the
// downsampling factor).
class degenerate_input_error : public std::runtime_error {
public:
    explicit degenerate_input_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace sevad
