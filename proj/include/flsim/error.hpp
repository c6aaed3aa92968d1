#pragma once

#include <stdexcept>
#include <string>

namespace flsim {

// Base for every error raised by the library. `where` names the operation or
// config field that failed so callers can report it without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(std::string where, const std::string& what)
      : std::runtime_error(where + ": " + what), where_(std::move(where)) {}

  const std::string& where() const noexcept { return where_; }

 private:
  std::string where_;
};

// Incompatible operand shapes in a tensor op or parameter-set arithmetic.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid argument or violated precondition.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Malformed dataset file.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Invalid experiment configuration; `where` is the dotted field path.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace flsim
