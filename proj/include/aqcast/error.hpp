#pragma once

#include <stdexcept>
#include <string>

namespace aqcast {

// Violated shape or call contract. Programming error on the caller side.
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Invalid configuration value (even kernel size, d <= 0, grid too small...).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Argument outside the mathematical domain of an operation (log1p(x<=-1)).
class DomainError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Input data problem: unreadable file, empty reading set, uncovered horizon.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// No measurement available to build a field.
class NoDataError : public DataError {
public:
    using DataError::DataError;
};

// Non-finite loss or failed gradient check.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Corrupt or truncated container file.
class FormatError : public DataError {
public:
    using DataError::DataError;
};

class VersionError : public FormatError {
public:
    using FormatError::FormatError;
};

}  // namespace aqcast
