#pragma once

#include <stdexcept>
#include <string>

namespace fairsel {

inline constexpr const char* kVersion = "0.1.0";

// Error taxonomy used across the library. The CLI maps these onto exit codes,
// so new failure modes should reuse one of the existing categories.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad configuration: invalid spec values, malformed config files, unknown keys.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Bad data: missing files, schema mismatches, unparsable cells, censoring violations.
class DataError : public Error {
public:
    using Error::Error;
};

// Solver-side failures: infeasible models, numerical breakdown, exhausted limits.
class SolverError : public Error {
public:
    using Error::Error;
};

}  // namespace fairsel
