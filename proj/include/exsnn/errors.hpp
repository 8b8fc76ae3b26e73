#pragma once

#include <stdexcept>
#include <string>

namespace exsnn {

/// Vector or matrix sizes that do not agree.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed or truncated input file.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// An iterative procedure stopped at its cap without meeting its tolerance.
class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(const std::string& what, double residual)
      : std::runtime_error{what}
      , residual_{residual}
    {
    }

    double residual() const { return residual_; }

private:
    double residual_;
};

/// Linear system without a unique solution.
class SingularSystemError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A cached artifact was produced under a different configuration.
class StaleCacheError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace exsnn
