// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace bld {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// NaN or Inf observed in a tensor, loss or parameter update.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Operand shapes or sizes do not agree.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Invalid argument values (ranges, counts, unknown names).
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// Malformed configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed or truncated input file.
class FormatError : public Error {
public:
    using Error::Error;
};

/// State survived a batch boundary that the memory constraints forbid.
class ConstraintViolation : public Error {
public:
    ConstraintViolation(std::string object, const std::string& what)
        : Error(what), object_(std::move(object)) {}

    const std::string& object() const noexcept { return object_; }

private:
    std::string object_;
};

}  // namespace bld
