#pragma once

#include <stdexcept>
#include <string>

namespace rollforge {

// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A value failed an invariant check. `field()` names the offending field.
class ValidationError : public Error {
 public:
  ValidationError(std::string field, const std::string& message)
      : Error("validation error [" + field + "]: " + message), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

// Policy versions observed out of order (clock or version skew).
class OrderingError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// A peer violated the request/response protocol (step before reset, step after done, ...).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// Transport-level failure talking to a remote service.
class WireError : public Error {
 public:
  using Error::Error;
};

}  // namespace rollforge
