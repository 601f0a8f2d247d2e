#pragma once

#include <stdexcept>
#include <string>

namespace mseed {

/// Raised when an operation's input contract is broken (shape mismatch,
/// out-of-range label, stale cache).
class ContractError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised for invalid configuration values (divisibility, radius, sizes).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when a numerical routine hits NaN/Inf.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace mseed
