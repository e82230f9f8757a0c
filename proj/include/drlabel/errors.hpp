#pragma once

#include <stdexcept>
#include <string>

namespace drlabel {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input violated a documented precondition (bad config, malformed file, ...).
class ValidationError : public Error {
public:
    using Error::Error;
};

class CoincidentAtoms : public Error {
public:
    using Error::Error;
};

class SamplingExhausted : public Error {
public:
    using Error::Error;
};

class InsufficientConverged : public Error {
public:
    using Error::Error;
};

class DivergedLoss : public Error {
public:
    using Error::Error;
};

/// Checkpoint and dataset disagree (species count, graph policy, ...).
class ShapeMismatch : public Error {
public:
    using Error::Error;
};

class AuditFailure : public Error {
public:
    using Error::Error;
};

}  // namespace drlabel
