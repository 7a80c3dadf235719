#pragma once

#include <stdexcept>
#include <string>

namespace segloss {

// Bad inputs: malformed fields, invalid configuration, shape mismatches. CLI exit code 1.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Degenerate arithmetic: empty-set denominators, divergence, zero variance. CLI exit code 2.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// File and wire-format problems: unreadable paths, bad headers, truncation. CLI exit code 3.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace segloss
