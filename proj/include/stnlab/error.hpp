#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace stnlab {

/// Base class for every error the library raises. `kind()` is a stable,
/// machine-readable tag used by the CLI's JSON error output.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& m) : Error("dimension", m) {}
};

struct StateError : Error {
  explicit StateError(const std::string& m) : Error("state", m) {}
};

struct ValueError : Error {
  explicit ValueError(const std::string& m) : Error("value", m) {}
};

struct SingularMatrixError : Error {
  explicit SingularMatrixError(const std::string& m) : Error("singular_matrix", m) {}
};

struct FormatError : Error {
  explicit FormatError(const std::string& m) : Error("format", m) {}
};

struct ValidationError : Error {
  explicit ValidationError(const std::string& m) : Error("validation", m) {}
};

class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t step, const std::string& m)
      : Error("divergence", m), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace stnlab
