#pragma once

#include <stdexcept>
#include <string>

namespace nplda {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input file. Messages carry file and line context.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition of an operation was violated by the caller.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Singular matrices, non-finite values, non-convergence.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace nplda
