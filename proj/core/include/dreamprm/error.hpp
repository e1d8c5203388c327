#pragma once

#include <stdexcept>
#include <string>

namespace dreamprm {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mismatched lengths or matrix shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced inside a computation. `where` names the op or step.
class NumericalError : public Error {
 public:
  NumericalError(std::string where, const std::string& what)
      : Error(what), where_(std::move(where)) {}
  const std::string& where() const noexcept { return where_; }

 private:
  std::string where_;
};

/// Training loss blew up (non-finite or above the divergence threshold).
class DivergenceError : public Error {
 public:
  DivergenceError(long iteration, const std::string& what)
      : Error(what), iteration_(iteration) {}
  long iteration() const noexcept { return iteration_; }

 private:
  long iteration_;
};

/// Invalid configuration; `field` is the dotted path of the offending key.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error(field.empty() ? what : field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// A stage could not find the on-disk artifacts it consumes.
class MissingArtifactError : public Error {
 public:
  using Error::Error;
};

}  // namespace dreamprm
