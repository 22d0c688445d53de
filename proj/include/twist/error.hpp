#pragma once

#include <stdexcept>
#include <string>

namespace twist {

// Base of every error raised by the library. The CLI maps the subclasses
// onto process exit codes.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
  using Error::Error;
};

class ValidationError : public Error {
public:
  using Error::Error;
};

class ParseError : public Error {
public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

class InvalidTokenError : public Error {
public:
  using Error::Error;
};

class DimensionError : public Error {
public:
  using Error::Error;
};

class InfeasibleError : public Error {
public:
  InfeasibleError(const std::string& what, long long min_required)
      : Error(what), min_required_(min_required) {}
  long long min_required() const noexcept { return min_required_; }

private:
  long long min_required_;
};

class ArtifactMismatchError : public Error {
public:
  using Error::Error;
};

}  // namespace twist
