#pragma once

// Named run configurations: the toy copy setup, the chosen ZoDIAC
// hyperparameters, and every row of the dropout/zoneout/gate ablation grid.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "zodiac/config_io.hpp"

namespace zodiac {

struct AblationRow {
  std::string name;  // table4-r01 .. table4-r20
  double system_dropout;
  double zodiac_dropout;
  double zoneout;
  std::optional<GateKind> gate;
  bool gelu_removed;
};

/// Rows in table order.
const std::vector<AblationRow>& ablation_rows();

/// Toy copy task: vocab 16, length 10, d_model 64, 4 heads, 2+2 layers.
RunConfig toy_copy_config();

/// Applies a row's knobs to a config (GELU removal also switches the FFN to ReLU).
RunConfig apply_ablation_row(RunConfig cfg, const AblationRow& row);

std::optional<RunConfig> find_preset(std::string_view name);
std::vector<std::string> preset_names();

}  // namespace zodiac
