#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace sped {

/// Base class for every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or out-of-domain arguments.
class InvalidInput : public Error {
public:
    using Error::Error;
};

/// A correlation or covariance matrix could not be factorized.
/// When the failure can be attributed to a pair of (near-)duplicate designs,
/// their indices are reported; otherwise both are -1.
class SingularMatrix : public Error {
public:
    explicit SingularMatrix(const std::string& what, long first = -1, long second = -1)
        : Error(what), pair_(first, second) {}

    std::pair<long, long> offending_pair() const noexcept { return pair_; }

private:
    std::pair<long, long> pair_;
};

/// An iterative solver ran out of iterations.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, double residual)
        : Error(what), residual_(residual) {}

    double residual() const noexcept { return residual_; }

private:
    double residual_;
};

/// Every restart of a parameter fit failed.
class FitError : public Error {
public:
    using Error::Error;
};

/// Broken internal consistency (should not happen for valid inputs).
class InternalError : public Error {
public:
    using Error::Error;
};

}  // namespace sped
