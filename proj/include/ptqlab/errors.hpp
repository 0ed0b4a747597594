#pragma once

#include <stdexcept>
#include <string>

namespace ptqlab {

// Base class for every error the library throws. The CLI maps each
// subtree to a distinct exit code.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : Error {
    using Error::Error;
};

// Malformed input file; the message names the offending line when known.
struct ParseError : Error {
    using Error::Error;
};

struct DuplicateIdError : ParseError {
    using ParseError::ParseError;
};

struct DimensionMismatch : Error {
    using Error::Error;
};

struct InvalidGroupSize : Error {
    using Error::Error;
};

struct NonFiniteError : Error {
    using Error::Error;
};

struct CholeskyFailure : Error {
    using Error::Error;
};

struct SearchSpaceTooLarge : Error {
    using Error::Error;
};

struct TooFewSamples : Error {
    using Error::Error;
};

struct LayerCountMismatch : Error {
    using Error::Error;
};

struct MissingSlot : Error {
    using Error::Error;
};

// HTTP client failures, raised after the retry budget is spent.
struct EndpointError : Error {
    using Error::Error;
};

struct EndpointUnreachable : EndpointError {
    using EndpointError::EndpointError;
};

struct AuthFailure : EndpointError {
    using EndpointError::EndpointError;
};

struct MalformedResponse : EndpointError {
    using EndpointError::EndpointError;
};

} // namespace ptqlab
