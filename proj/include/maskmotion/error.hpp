#pragma once

#include <stdexcept>
#include <string>

namespace maskmotion {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Caller supplied something invalid (bad shape, bad flag, malformed file).
class ValidationError : public Error {
public:
    using Error::Error;
};

class ShapeError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class FormatError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// NaN/Inf appeared in a computation, or a numeric invariant broke at runtime.
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace maskmotion
