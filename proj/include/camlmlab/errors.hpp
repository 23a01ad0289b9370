#pragma once

#include <stdexcept>
#include <string>

namespace camlmlab {

// Base type for all library errors. The CLI maps subclasses to exit codes.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : Error { using Error::Error; };           // extent mismatches
struct NumericsError : Error { using Error::Error; };       // NaN/Inf, zero norms
struct DegenerateRowError : Error { using Error::Error; };  // fully-disallowed attention row
struct LabelError : Error { using Error::Error; };          // out-of-range ids or labels
struct StateError : Error { using Error::Error; };          // backward twice, detached graph
struct ParseError : Error { using Error::Error; };          // malformed file contents
struct ConfigError : Error { using Error::Error; };         // invalid configuration
struct IoError : Error { using Error::Error; };             // filesystem failures

}  // namespace camlmlab
