#pragma once

#include <stdexcept>
#include <string>

namespace hypsel {

enum class ErrorKind {
  config,
  shape,
  validation,
  numeric,
  decode,
  schema,
  version,
  io,
  training,
  service,
  selector_aborted,
};

const char* to_string(ErrorKind kind);

/// Base of every error thrown by the library. `kind()` is stable and is what
/// the CLI prints in its machine-readable error line.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& message)
      : Error(ErrorKind::config, field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& m) : Error(ErrorKind::shape, m) {}
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& m) : Error(ErrorKind::validation, m) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& m) : Error(ErrorKind::numeric, m) {}
};

class DecodeError : public Error {
 public:
  explicit DecodeError(const std::string& m) : Error(ErrorKind::decode, m) {}
};

class SchemaError : public Error {
 public:
  explicit SchemaError(const std::string& m) : Error(ErrorKind::schema, m) {}
};

class VersionError : public Error {
 public:
  VersionError(const std::string& what, int found, int expected)
      : Error(ErrorKind::version, what + ": found schema version " + std::to_string(found) +
                                      ", expected " + std::to_string(expected)),
        found_(found),
        expected_(expected) {}
  int found() const noexcept { return found_; }
  int expected() const noexcept { return expected_; }

 private:
  int found_;
  int expected_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& m) : Error(ErrorKind::io, m) {}
};

class TrainingError : public Error {
 public:
  explicit TrainingError(const std::string& m) : Error(ErrorKind::training, m) {}
};

class ServiceError : public Error {
 public:
  /// `status` is the HTTP status the service maps this error to.
  ServiceError(int status, const std::string& m) : Error(ErrorKind::service, m), status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

class SelectorAborted : public Error {
 public:
  explicit SelectorAborted(const std::string& m) : Error(ErrorKind::selector_aborted, m) {}
};

}  // namespace hypsel
