#pragma once

#include <stdexcept>
#include <string>

namespace scoreda {

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Argument outside its mathematical domain (e.g. t outside [0,1]).
struct DomainError : Error {
    using Error::Error;
};

/// Malformed input: wrong dimension, empty batch, non-finite values, layout mismatch.
struct InputError : Error {
    using Error::Error;
};

/// A numeric guard fired (division below floor, non-finite intermediate).
struct NumericError : Error {
    using Error::Error;
};

/// Training diverged; carries the epoch at which it happened.
struct TrainingError : Error {
    int epoch;
    TrainingError(const std::string& msg, int epoch_) : Error(msg), epoch(epoch_) {}
};

/// Invalid configuration value or missing artifact.
struct ConfigError : Error {
    using Error::Error;
};

}  // namespace scoreda
