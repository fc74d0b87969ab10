#pragma once

#include <stdexcept>
#include <string>

namespace neq {

// Every error raised by the library derives from Error. category() is a short
// stable token used by the CLI for its one-line machine-parsable messages.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& message)
      : std::runtime_error(message), category_(std::move(category)) {}

  const std::string& category() const noexcept { return category_; }

 private:
  std::string category_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& m) : Error("shape", m) {}
};

class NonFiniteError : public Error {
 public:
  explicit NonFiniteError(const std::string& m) : Error("non_finite", m) {}
};

class StateError : public Error {
 public:
  explicit StateError(const std::string& m) : Error("state", m) {}
};

class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& m)
      : Error("config", field.empty() ? m : field + ": " + m), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& m) : Error("data", m) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& m) : Error("io", m) {}
};

}  // namespace neq
