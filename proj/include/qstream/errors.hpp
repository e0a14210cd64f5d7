#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace qstream {

/// Mismatched image/stack dimensions.
class ShapeError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
public:
  using std::domain_error::domain_error;
};

/// Frame fed out of order into a streaming consumer.
class SequencingError : public std::logic_error {
public:
  using std::logic_error::logic_error;
};

/// Invalid ladder, sensor or pipeline configuration. `field` holds the
/// dotted path of the offending key when one is known.
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& message, std::string field = {})
      : std::runtime_error(field.empty() ? message : field + ": " + message),
        field_(std::move(field)) {}

  [[nodiscard]] const std::string& field() const noexcept { return field_; }

private:
  std::string field_;
};

/// Malformed or truncated file. `offset` is the byte position where
/// decoding failed.
class FormatError : public std::runtime_error {
public:
  FormatError(const std::string& message, std::uint64_t offset)
      : std::runtime_error(message + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  [[nodiscard]] std::uint64_t offset() const noexcept { return offset_; }

private:
  std::uint64_t offset_;
};

/// The requested SNR threshold is never reached inside the search bounds.
class EmptyRangeError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A polled snapshot mixed state from different frame indices.
class ConsistencyError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

}  // namespace qstream
