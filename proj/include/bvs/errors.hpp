#pragma once

#include <stdexcept>
#include <string>

namespace bvs {

// Every failure the library reports derives from Error so callers can catch
// the whole family in one place (the CLI maps them to exit code 1).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class IntegrityError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class ConditionError : public Error {
 public:
  using Error::Error;
};

}  // namespace bvs
