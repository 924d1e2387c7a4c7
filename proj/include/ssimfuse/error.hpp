#pragma once

#include <stdexcept>
#include <string>

namespace ssimfuse {

/// Base for every error the library throws. `tag()` is a short machine-readable
/// identifier the CLI prints as `error[<tag>]`.
class Error : public std::runtime_error {
 public:
  Error(std::string tag, const std::string& what)
      : std::runtime_error(what), tag_(std::move(tag)) {}
  const std::string& tag() const noexcept { return tag_; }

 private:
  std::string tag_;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& what) : Error("invalid-shape", what) {}
};

struct ArgumentError : Error {
  explicit ArgumentError(const std::string& what) : Error("invalid-argument", what) {}
};

struct InternalError : Error {
  explicit InternalError(const std::string& what) : Error("internal", what) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error("invalid-config", what) {}
};

struct CheckpointError : Error {
  CheckpointError(std::string tag, const std::string& what) : Error(std::move(tag), what) {}
};

struct ImageError : Error {
  ImageError(std::string tag, const std::string& what) : Error(std::move(tag), what) {}
};

struct TrainingError : Error {
  explicit TrainingError(const std::string& what) : Error("non-finite-loss", what) {}
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error("io", what) {}
};

}  // namespace ssimfuse
