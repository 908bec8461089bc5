#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace xmetra {

// Shape/dimension mismatch in a tensor primitive.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Caller violated an operation contract (non-scalar loss, missing gradient entry, ...).
struct ContractError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// API misuse, e.g. running backward twice on the same tape.
struct UsageError : std::logic_error {
    using std::logic_error::logic_error;
};

// Bad model/data input (out-of-vocab id, empty sequence, malformed record).
struct InputError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Episode sampling cannot be satisfied by the pool.
struct SamplingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid or inconsistent configuration.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed file content; carries the offending line when known.
struct ParseError : std::runtime_error {
    ParseError(const std::string& msg, std::size_t line)
        : std::runtime_error(msg + " (line " + std::to_string(line) + ")"), line(line) {}
    explicit ParseError(const std::string& msg) : std::runtime_error(msg), line(0) {}
    std::size_t line;
};

// Filesystem failure.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss; carries the step it happened at.
struct DivergenceError : std::runtime_error {
    DivergenceError(const std::string& msg, std::size_t step)
        : std::runtime_error(msg + " (step " + std::to_string(step) + ")"), step(step) {}
    std::size_t step;
};

}  // namespace xmetra
