#pragma once

#include <stdexcept>
#include <string>

namespace optdesign {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when an argument violates a documented precondition
/// (dimension mismatch, non-finite entries, non-SPD covariance, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Raised by label/prediction oracles (capability missing, lookup miss,
/// transport or protocol failure).
class OracleError : public Error {
 public:
  using Error::Error;
};

/// Transport-level failure of a remote oracle. These are the only oracle
/// errors that the remote client retries.
class TransportError : public OracleError {
 public:
  using OracleError::OracleError;
};

/// Malformed or schema-violating remote response. Never retried.
class ProtocolError : public OracleError {
 public:
  using OracleError::OracleError;
};

}  // namespace optdesign
