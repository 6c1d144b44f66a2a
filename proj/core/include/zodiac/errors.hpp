#pragma once

#include <stdexcept>
#include <string>

namespace zodiac {

/// Operand shapes are incompatible (matmul inner dims, broadcast, reshape).
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A precondition of an operation was violated by the caller.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A mask slice has no unmasked entries where at least one is required.
class DegenerateMaskError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// A configuration value is invalid. `field()` names the offending key.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& what)
      : std::invalid_argument(field + ": " + what), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(long step, const std::string& what)
      : std::runtime_error(what), step_(step) {}

  long step() const noexcept { return step_; }

 private:
  long step_;
};

}  // namespace zodiac
