#pragma once

#include <stdexcept>
#include <string>

namespace railpipe {

// Error categories match the CLI exit codes: ValidationError -> 1,
// ConfigError -> 2, IoError -> 3. Contract violations (bad arguments to
// library functions) throw std::invalid_argument and are not expected to
// surface from a correctly wired pipeline.

class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or schema-violating input data (bad JSON, short binary record).
class SchemaError : public ValidationError {
 public:
  explicit SchemaError(const std::string& msg) : ValidationError(msg) {}
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Cut-region sampling ran out of attempts. Callers downgrade this to
// "CutMix skipped" for the frame and keep a counter.
class RegionSearchError : public std::runtime_error {
 public:
  explicit RegionSearchError(const std::string& msg)
      : std::runtime_error(msg) {}
};

}  // namespace railpipe
