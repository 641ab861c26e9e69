#pragma once

#include <stdexcept>
#include <string>

namespace hcfctx {

// Data errors (CLI exit code 2).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public DataError {
 public:
  using DataError::DataError;
};

class SchemaError : public DataError {
 public:
  using DataError::DataError;
};

class AlignmentError : public DataError {
 public:
  using DataError::DataError;
};

class PeriodError : public DataError {
 public:
  using DataError::DataError;
};

class IoError : public DataError {
 public:
  using DataError::DataError;
};

// Numerical and protocol errors (CLI exit code 3).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An observation has zero probability under every hidden state.
class DegenerateError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// A plaintext or real value lies outside the representable range.
class RangeError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Ciphertexts or keys belong to different key pairs.
class KeyError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Scaled intermediate magnitudes left the plaintext ring (c or key too small).
class OverflowError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class ProtocolError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace hcfctx
