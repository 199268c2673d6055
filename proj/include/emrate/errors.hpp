#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace emrate {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A caller-supplied value violates a documented precondition.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Numerical failures (singular systems, non-finite values).
class NumericalError : public Error {
public:
    using Error::Error;
};

/// The M-step linear system could not be factorized even after the jitter retry.
class SingularSystem : public NumericalError {
public:
    explicit SingularSystem(const std::string& what, std::optional<std::size_t> iteration = std::nullopt)
        : NumericalError(iteration ? what + " (EM iteration " + std::to_string(*iteration) + ")" : what),
          iteration_(iteration) {}

    std::optional<std::size_t> iteration() const noexcept { return iteration_; }

private:
    std::optional<std::size_t> iteration_;
};

/// Rate fitting found fewer than three points above the error floor.
class TooFewPoints : public Error {
public:
    using Error::Error;
};

/// A closed-form contraction bound was requested outside the regime where it holds.
class OutOfRegime : public Error {
public:
    using Error::Error;
};

inline void require(bool condition, const std::string& message) {
    if (!condition) throw InvalidArgument(message);
}

}  // namespace emrate
