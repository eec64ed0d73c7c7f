#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace vla {

// Base for every error raised by the library. The CLI maps these to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed JSON or text input. `offset` is the byte offset reported by the parser.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  explicit ParseError(const std::string& what) : Error(what) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_ = 0;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

// A record references an id that does not exist (category, image).
class ReferentialError : public Error {
 public:
  using Error::Error;
};

class EmptyInputError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// An agent answered, but not in the agreed shape.
class ProtocolError : public Error {
 public:
  ProtocolError(const std::string& what, std::string raw = {})
      : Error(what), raw_(std::move(raw)) {}
  const std::string& raw_response() const noexcept { return raw_; }

 private:
  std::string raw_;
};

// Transport failed after all retries.
class AgentUnavailableError : public Error {
 public:
  using Error::Error;
};

class CredentialError : public Error {
 public:
  using Error::Error;
};

class OracleUnavailableError : public Error {
 public:
  using Error::Error;
};

class InfeasibleSpecError : public Error {
 public:
  using Error::Error;
};

}  // namespace vla
