#pragma once

#include <stdexcept>
#include <string>

namespace transcues {

// Tensor shapes that cannot be combined, or inputs whose spatial size breaks
// a module's stride arithmetic.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid presets, toggles, weights, or malformed configuration files.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Label values out of range, orphaned or malformed dataset files.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A training step produced a non-finite loss.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace transcues
