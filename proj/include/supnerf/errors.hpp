#pragma once

#include <stdexcept>
#include <string>

namespace supnerf {

// Error taxonomy. Every failure mode that callers are expected to branch on
// gets its own type; everything else is a plain std::runtime_error.

class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

class BehindCameraError : public std::runtime_error {
 public:
  explicit BehindCameraError(const std::string& msg)
      : std::runtime_error(msg) {}
};

class CorruptFileError : public std::runtime_error {
 public:
  explicit CorruptFileError(const std::string& msg)
      : std::runtime_error(msg) {}
};

class ConfigMismatchError : public std::runtime_error {
 public:
  explicit ConfigMismatchError(const std::string& msg)
      : std::runtime_error(msg) {}
};

class DeterminismError : public std::runtime_error {
 public:
  explicit DeterminismError(const std::string& msg)
      : std::runtime_error(msg) {}
};

class NonFiniteError : public std::runtime_error {
 public:
  explicit NonFiniteError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace supnerf
