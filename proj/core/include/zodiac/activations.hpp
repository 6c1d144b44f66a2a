#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "zodiac/tensor.hpp"

namespace zodiac {

enum class Mode { train, eval };

enum class GateKind { sigmoid, tanh };

std::string_view to_string(GateKind kind);
std::optional<GateKind> parse_gate(std::string_view name);

/// x * Phi(x), Phi the standard normal CDF (via erf).
Tensor gelu_exact(const Tensor& x);
/// x * sigmoid(1.702 x).
Tensor gelu_approx(const Tensor& x);

double gelu_exact(double x);
double gelu_approx(double x);

double scalar_gate(double v, GateKind kind);
/// Elementwise gate; an empty kind is the identity.
Tensor scalar_gate(const Tensor& v, std::optional<GateKind> kind);

/// Seed material fully determines the dropout mask.
struct DropoutSpec {
  double rate = 0.0;
  Mode mode = Mode::eval;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::uint64_t site = 0;
  /// Index of the first sample along axis 0.
  std::uint64_t sample_offset = 0;
};

/// Stable 64-bit identifier for a named dropout site.
std::uint64_t site_id(std::string_view name);

/// Inverted dropout: in train mode each element is zeroed with probability
/// `rate` and survivors are scaled by 1/(1-rate). Eval mode and rate 0 return
/// the input unchanged.
Tensor dropout_apply(const Tensor& x, const DropoutSpec& spec);

/// Per-forward-pass state threaded through the model: mode plus the seed
/// material shared by every dropout site.
struct RunContext {
  Mode mode = Mode::eval;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;

  DropoutSpec dropout(double rate, std::string_view site) const {
    return {rate, mode, seed, step, site_id(site), 0};
  }
};

}  // namespace zodiac
