#pragma once

#include <stdexcept>
#include <string>

namespace mceage {

// Base class for all errors raised by the library. Every module throws a
// subclass so callers (the CLI in particular) can map error classes to exit
// codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Precondition violated by the caller: bad shapes, empty inputs, out of range.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent file content.
class FormatError : public Error {
 public:
  enum class Kind { Io, MalformedHeader, SizeMismatch, InvalidSpacing, UnsupportedDtype, ValueRange, Version };

  FormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// A numerical computation produced a non-finite value.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace mceage
