#pragma once

#include <stdexcept>
#include <string>

namespace sivcav {

/// Base for every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A parameter violates a documented precondition (non-finite, out of range).
class InvalidParameter : public Error {
public:
    using Error::Error;
};

/// The input lies outside the domain where the operation is defined.
class DomainError : public Error {
public:
    using Error::Error;
};

/// A numerical procedure failed (integration tolerance, singular system).
class NumericalError : public Error {
public:
    using Error::Error;
};

inline void require(bool condition, const std::string& message)
{
    if (!condition) throw InvalidParameter(message);
}

} // namespace sivcav
