#pragma once

#include <stdexcept>
#include <string>

namespace sparsekit {

// Base for every error raised by the library. Subclasses let callers (the CLI
// in particular) distinguish bad input from bad files.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class DegenerateTeacher : public Error {
 public:
  using Error::Error;
};

}  // namespace sparsekit
