#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace curate {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed JSON on an input line.
class ParseError : public Error {
 public:
  ParseError(std::size_t line_no, const std::string& what)
      : Error("line " + std::to_string(line_no) + ": " + what), line_no_{line_no} {}
  [[nodiscard]] std::size_t line_no() const noexcept { return line_no_; }

 private:
  std::size_t line_no_;
};

/// Well-formed JSON that violates the record schema or an invariant.
class SchemaError : public Error {
 public:
  SchemaError(std::size_t line_no, const std::string& what)
      : Error(line_no == 0 ? what : "line " + std::to_string(line_no) + ": " + what), line_no_{line_no} {}
  explicit SchemaError(const std::string& what) : Error(what), line_no_{0} {}
  [[nodiscard]] std::size_t line_no() const noexcept { return line_no_; }

 private:
  std::size_t line_no_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Precondition on an operation's arguments failed (k > n, K > tags, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

}  // namespace curate
