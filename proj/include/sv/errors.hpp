#pragma once

#include <stdexcept>
#include <string>

namespace sv {

// Bad configuration: rejected values, unknown keys, inconsistent shapes.
// The CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Missing or malformed input data (datasets, images, meshes, checkpoints).
// The CLI maps this to exit code 3.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Numerical failure at runtime: non-finite values in the forward pass,
// gradients, or parameter updates.  The CLI maps this to exit code 1.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace sv
