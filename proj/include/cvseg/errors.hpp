#pragma once

#include <stdexcept>
#include <string>

namespace cvseg {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible shapes or extents.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Index outside the addressed range.
class IndexError : public Error {
 public:
  using Error::Error;
};

// Input violates a documented precondition.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// A loss or tensor became NaN/inf during training.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

}  // namespace cvseg
