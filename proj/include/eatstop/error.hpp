#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

namespace eatstop {

// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Precondition or argument validation failure.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Trace / report decoding failures. `record` is the 1-based JSONL record
// number when known, `field` a dotted path to the offending value.
class DataError : public Error {
 public:
  DataError(const std::string& kind, std::string message,
            std::optional<std::size_t> record = std::nullopt,
            std::string field = {})
      : Error(format(kind, message, record, field)),
        record_(record),
        field_(std::move(field)) {}

  std::optional<std::size_t> record() const { return record_; }
  const std::string& field() const { return field_; }

 private:
  static std::string format(const std::string& kind, const std::string& message,
                            std::optional<std::size_t> record,
                            const std::string& field) {
    std::string out = kind;
    if (record) out += " at record " + std::to_string(*record);
    if (!field.empty()) out += " field '" + field + "'";
    out += ": " + message;
    return out;
  }

  std::optional<std::size_t> record_;
  std::string field_;
};

class MalformedJson : public DataError {
 public:
  MalformedJson(std::string message, std::optional<std::size_t> record = std::nullopt)
      : DataError("malformed json", std::move(message), record) {}
};

class SchemaViolation : public DataError {
 public:
  SchemaViolation(std::string message, std::optional<std::size_t> record = std::nullopt,
                  std::string field = {})
      : DataError("schema violation", std::move(message), record, std::move(field)) {}
};

class InvariantViolation : public DataError {
 public:
  InvariantViolation(std::string message, std::optional<std::size_t> record = std::nullopt,
                     std::string field = {})
      : DataError("invariant violation", std::move(message), record, std::move(field)) {}
};

// Simulation needs data the trace does not carry (probe, rollouts, pass1).
class MissingData : public Error {
 public:
  using Error::Error;
};

// Completion endpoint failures. Transport errors are retryable.
class EndpointError : public Error {
 public:
  EndpointError(std::string message, bool retryable = false)
      : Error(std::move(message)), retryable_(retryable) {}

  bool retryable() const { return retryable_; }

 private:
  bool retryable_;
};

}  // namespace eatstop
