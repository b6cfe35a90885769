#ifndef PRFL_ERRORS_HPP
#define PRFL_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace prfl {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct InputError : std::runtime_error {
  explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ProtocolError : std::runtime_error {
  explicit ProtocolError(const std::string& msg) : std::runtime_error(msg) {}
};

struct CompressionError : std::runtime_error {
  explicit CompressionError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Typed decode failures for the wire codecs.
struct DecodeError : std::runtime_error {
  enum class Kind { BadMagic, BadVersion, Truncated, CrcMismatch, Corrupt };
  Kind kind;
  DecodeError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

}  // namespace prfl

#endif  // PRFL_ERRORS_HPP
