#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace cmx {

// Base class for all library errors.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Invalid hyperparameters or run configuration.
class ConfigError : public Error {
  public:
    using Error::Error;
};

// Shape or index mismatch between tensors or buffers.
class DimensionError : public Error {
  public:
    using Error::Error;
};

// Binary container violation. Carries the byte offset where parsing stopped.
class FormatError : public Error {
  public:
    FormatError(const std::string& what, std::uint64_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
    std::uint64_t offset() const { return offset_; }

  private:
    std::uint64_t offset_;
};

// Degenerate data: empty sequence, empty retrieval set, no activated codewords.
class DataError : public Error {
  public:
    using Error::Error;
};

// Non-finite values where finite math is required.
class NumericError : public Error {
  public:
    using Error::Error;
};

}  // namespace cmx
