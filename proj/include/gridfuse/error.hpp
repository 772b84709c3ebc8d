#pragma once

#include <stdexcept>
#include <string>

namespace gridfuse {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid input data: malformed files, inconsistent cases, bad measurements.
class DataError : public Error {
public:
    using Error::Error;
};

/// Numerical failure inside a solver (singular systems, non-convergence).
class SolverError : public Error {
public:
    SolverError(const std::string& what, double last_residual = -1.0)
        : Error(what), last_residual_(last_residual) {}

    double last_residual() const noexcept { return last_residual_; }

private:
    double last_residual_;
};

}  // namespace gridfuse
