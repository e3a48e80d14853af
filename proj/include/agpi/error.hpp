#pragma once

#include <stdexcept>
#include <string>

namespace agpi {

// Bad arguments or violated preconditions.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Missing files or directories, unreadable images.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A dataset failed its structural checks.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Query/gallery protocol inconsistencies.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Checkpoint truncation, bad magic, checksum or version mismatch.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Configuration text could not be parsed or is incomplete.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A training loss became non-finite.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(std::string component, const std::string& what)
      : std::runtime_error(what), component_(std::move(component)) {}
  const std::string& component() const { return component_; }

 private:
  std::string component_;
};

}  // namespace agpi
