#pragma once

#include <stdexcept>
#include <string>

namespace sftsel {

// Base of every error raised by the library. The CLI maps the category to an
// exit code: transport failures exit 1, everything else exits 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual bool is_transport() const noexcept { return false; }
};

// Requested subset size exceeds what the input can provide.
class SizeError : public Error {
 public:
  using Error::Error;
};

// Malformed text: JSON syntax, invalid UTF-8, unparseable LLM reply.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Well-formed input that lacks a required field or has the wrong type.
class SchemaError : public Error {
 public:
  using Error::Error;
};

// Bad configuration: unloadable vocabulary, unknown enum value, missing key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Numerical input that violates an invariant (non-finite, wrong shape).
class DataError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Upstream endpoint could not be reached or kept failing after retries.
class TransportError : public Error {
 public:
  using Error::Error;
  bool is_transport() const noexcept override { return true; }
};

// Upstream rejected the request with a non-retryable status.
class PermanentError : public TransportError {
 public:
  PermanentError(int status, const std::string& what)
      : TransportError(what), status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

}  // namespace sftsel
