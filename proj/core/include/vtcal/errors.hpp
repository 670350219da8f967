#pragma once

#include <stdexcept>
#include <string>

namespace vtcal {

// Error categories map onto CLI exit codes (see tools/vtcal_cli.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public NumericError {
 public:
  using NumericError::NumericError;
};

// Raised by l2_normalize and calibrate_state when a vector has (near) zero norm.
class DegenerateVectorError : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace vtcal
