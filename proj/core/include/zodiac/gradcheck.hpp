#pragma once

// Finite-difference verification of the analytic gradients, per attention op
// and per parameter of a tiny model.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "zodiac/model.hpp"

namespace zodiac {

struct BlockError {
  std::string op;
  std::string block;
  std::size_t size = 0;
  /// max|analytic - numeric| / max(max|analytic|, max|numeric|); the absolute
  /// difference when both gradients are below 1e-10 everywhere.
  double rel_error = 0.0;
  double abs_error = 0.0;
};

struct GradcheckReport {
  std::vector<BlockError> blocks;

  /// Largest error over the blocks of `op` (all blocks when empty).
  double max_error(std::string_view op = {}) const;
  const BlockError* find(std::string_view op, std::string_view block) const;
  std::vector<std::string> ops() const;
};

struct GradcheckOptions {
  double h = 1e-5;
  bool check_ops = true;
  bool check_model = true;
  /// "op/block", e.g. "model/enc.0.ff.w1": its analytic gradient is scaled
  /// by corrupt_factor before comparison.
  std::optional<std::string> corrupt_block;
  double corrupt_factor = 1.01;
};

/// Checks f's gradient with respect to every named input by central
/// differences. f must return a scalar and be deterministic; a second
/// evaluation that differs raises ContractError.
std::vector<BlockError> gradcheck_function(const std::string& op,
                                           const std::vector<std::pair<std::string, Tensor>>& inputs,
                                           const std::function<Tensor()>& f, const GradcheckOptions& options = {});

/// Op checks (gelu_exact, gelu_approx, rca, piv, zodiac_head, zmha) at the
/// attention settings of `cfg`, plus every parameter of a model built from
/// `cfg`. Dropout is forced to 0 and everything runs in eval mode.
GradcheckReport gradcheck(const ModelConfig& cfg, std::uint64_t seed, const GradcheckOptions& options = {});

/// Tiny config for gradient checks: d_model 8, 2 heads, 2+2 layers, d_ff 16.
ModelConfig gradcheck_model_config(AttentionKind kind);

}  // namespace zodiac
