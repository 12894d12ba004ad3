#pragma once

#include <stdexcept>
#include <string>

namespace eirm {

// Base class for everything this library throws on purpose.
class Error : public std::runtime_error {
public:
  Error(std::string kind, const std::string& msg)
      : std::runtime_error(msg), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

private:
  std::string kind_;
};

// A required column or field is absent from the input.
struct SchemaError : Error {
  explicit SchemaError(const std::string& msg) : Error("schema", msg) {}
};

// A cell or argument has an unusable value (wrong type, out of range).
struct ValueError : Error {
  explicit ValueError(const std::string& msg) : Error("value", msg) {}
};

// Data contradicts a structural invariant (e.g. treatment varies within person).
struct ConsistencyError : Error {
  explicit ConsistencyError(const std::string& msg) : Error("consistency", msg) {}
};

// A referenced id does not exist.
struct KeyError : Error {
  explicit KeyError(const std::string& msg) : Error("key", msg) {}
};

// Simulation or run configuration is out of bounds.
struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error("config", msg) {}
};

// A model specification cannot be realized on the given data.
struct ModelSpecError : Error {
  explicit ModelSpecError(const std::string& msg) : Error("spec", msg) {}
};

// Degenerate input for a statistic (zero variance and the like).
struct DegenerateError : Error {
  explicit DegenerateError(const std::string& msg) : Error("degenerate", msg) {}
};

// Non-finite values or a failed factorization inside the fitting engine.
struct NumericError : Error {
  explicit NumericError(const std::string& msg) : Error("numeric", msg) {}
};

// Filesystem trouble.
struct IoError : Error {
  explicit IoError(const std::string& msg) : Error("io", msg) {}
};

}  // namespace eirm
