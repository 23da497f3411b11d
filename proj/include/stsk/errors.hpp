#pragma once

#include <stdexcept>
#include <string>

namespace stsk {

// Error taxonomy. Everything derives from std::runtime_error so callers can
// catch coarsely; tests catch the precise type.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};

struct InvalidParamError : std::runtime_error {
    explicit InvalidParamError(const std::string& msg)
        : std::runtime_error("invalid parameter: " + msg) {}
};

struct InvalidAnnotationError : std::runtime_error {
    explicit InvalidAnnotationError(const std::string& msg)
        : std::runtime_error("invalid annotation: " + msg) {}
};

struct UnsupportedModeError : std::runtime_error {
    explicit UnsupportedModeError(const std::string& msg)
        : std::runtime_error("unsupported mode: " + msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

struct SequencingError : std::runtime_error {
    explicit SequencingError(const std::string& msg)
        : std::runtime_error("sequencing error: " + msg) {}
};

struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg) : std::runtime_error("parse error: " + msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error("i/o error: " + msg) {}
};

struct GradientError : std::runtime_error {
    explicit GradientError(const std::string& msg)
        : std::runtime_error("gradient error: " + msg) {}
};

}  // namespace stsk
