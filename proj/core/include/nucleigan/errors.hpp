#pragma once

#include <stdexcept>
#include <string>

namespace nucleigan {

/// Base class for every error raised by the library. `kind()` is a stable
/// machine-readable tag used by the CLI when emitting error JSON.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class ArgumentError : public Error {
 public:
  explicit ArgumentError(const std::string& what) : Error("argument", what) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error("numerical", what) {}
};

class InsufficientTissueError : public Error {
 public:
  explicit InsufficientTissueError(const std::string& what)
      : Error("insufficient_tissue", what) {}
};

class EmptyDictionaryError : public Error {
 public:
  explicit EmptyDictionaryError(const std::string& what)
      : Error("empty_dictionary", what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("io", what) {}
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error("validation", what) {}
};

}  // namespace nucleigan
