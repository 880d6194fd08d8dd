#pragma once

#include <stdexcept>
#include <string>

namespace ctxbench {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Bad arguments or configuration supplied by the caller.
struct UsageError : Error {
    using Error::Error;
};

/// Input data that cannot be used: unreadable files, broken invariants.
struct DataError : Error {
    using Error::Error;
};

struct IoError : DataError {
    using DataError::DataError;
};

/// Failures while a computation is running (diverging training, exhausted
/// transport retries that the caller chose to treat as fatal, ...).
struct RuntimeFailure : Error {
    using Error::Error;
};

} // namespace ctxbench
