#pragma once

#include <stdexcept>
#include <string>

namespace canid {

// Exception families map onto the CLI exit codes: usage 1, data 2, model 3.

class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ModelError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when an operation is attempted on a stopped bus.
class BusStopped : public std::runtime_error {
public:
    BusStopped() : std::runtime_error("bus stopped") {}
};

}  // namespace canid
