#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mldr {

/// Shapes that do not conform for an operation (matmul contraction, broadcast, axis).
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A caller broke a documented precondition (non-scalar loss, unnormalized rows, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class HyperparameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Bad data values: labels out of range, empty categories, mismatched input shapes.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binary file could not be decoded. Carries the byte offset where decoding stopped.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Training diverged (non-finite loss). Message names epoch and step.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mldr
