#pragma once

#include <stdexcept>
#include <string>

namespace dglight {

// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A file or record did not match the expected schema or version.
class SchemaError : public Error {
 public:
  using Error::Error;
};

// An external completion endpoint could not be reached or answered badly.
class TransportError : public Error {
 public:
  using Error::Error;
};

}  // namespace dglight
