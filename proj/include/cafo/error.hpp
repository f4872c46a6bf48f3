#pragma once

#include <stdexcept>
#include <string>

namespace cafo {

/// Malformed or inconsistent input data (files, shapes of datasets, manifests).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shape or argument contract violated by a caller.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A NaN or Inf appeared at an operation boundary.
class NonFiniteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace cafo
