#pragma once

#include <stdexcept>
#include <string>

namespace visimp {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// An argument violates a documented precondition (non-positive sigma,
/// infeasible crop, target larger than source, ...).
class ParameterError : public Error {
public:
    using Error::Error;
};

/// Input data is malformed or inconsistent: unparsable files, dimension
/// mismatches, out-of-range values.
class DataError : public Error {
public:
    using Error::Error;
};

/// A quantity is mathematically undefined for the given input, e.g. a
/// correlation against a zero-variance map.
class UndefinedMetricError : public Error {
public:
    using Error::Error;
};

/// Training produced a non-finite loss.
class TrainingDiverged : public Error {
public:
    using Error::Error;
};

}  // namespace visimp
