#include "zodiac/presets.hpp"

#include <cstdio>

namespace zodiac {

const std::vector<AblationRow>& ablation_rows() {
  static const std::vector<AblationRow> rows = [] {
    constexpr auto none = std::nullopt;
    constexpr auto sig = GateKind::sigmoid;
    std::vector<AblationRow> r{
        {"", 0.1, 0.1, 0.0, none, false},  {"", 0.1, 0.2, 0.0, none, false}, {"", 0.05, 0.1, 0.0, none, false},
        {"", 0.1, 0.05, 0.0, none, false}, {"", 0.2, 0.2, 0.0, none, false}, {"", 0.2, 0.1, 0.0, none, false},
        {"", 0.2, 0.25, 0.0, none, false}, {"", 0.2, 0.15, 0.0, none, false}, {"", 0.2, 0.3, 0.0, none, false},
        {"", 0.1, 0.1, 1.0, none, false},  {"", 0.1, 0.2, 1.0, none, false}, {"", 0.1, 0.3, 1.0, none, false},
        {"", 0.1, 0.4, 1.0, none, false},  {"", 0.2, 0.3, 1.0, none, true},  {"", 0.2, 0.3, 1.0, none, false},
        {"", 0.1, 0.2, 2.0, sig, false},   {"", 0.1, 0.2, 1.1, sig, false},  {"", 0.2, 0.3, 1.0, sig, false},
        {"", 0.1, 0.1, 1.0, sig, false},   {"", 0.1, 0.2, 1.0, sig, false},
    };
    for (std::size_t i = 0; i < r.size(); ++i) {
      char buf[16];
      std::snprintf(buf, sizeof buf, "table4-r%02zu", i + 1);
      r[i].name = buf;
    }
    return r;
  }();
  return rows;
}

RunConfig toy_copy_config() {
  RunConfig c;
  c.model.vocab_size = 16;
  c.model.d_model = 64;
  c.model.heads = 4;
  c.model.n_encoder_layers = 2;
  c.model.n_decoder_layers = 2;
  c.model.d_ff = 128;
  c.model.max_len = 32;
  c.model.attention_kind = AttentionKind::zodiac;
  c.model.sync_attention();
  c.model.attention.system_dropout = 0.1;
  c.model.attention.zodiac_dropout = 0.2;
  c.model.attention.zoneout = 1.0;
  c.model.attention.gate = GateKind::sigmoid;
  c.task.kind = TaskKind::copy;
  c.task.vocab_size = 16;
  c.task.seq_len = 10;
  c.task.n_train = 6400;
  c.task.n_eval = 256;
  c.train.batch_size = 32;
  c.train.max_steps = 5000;
  c.train.max_epochs = 30;
  c.train.target_accuracy = 0.99;
  return c;
}

RunConfig apply_ablation_row(RunConfig cfg, const AblationRow& row) {
  auto& a = cfg.model.attention;
  cfg.model.attention_kind = AttentionKind::zodiac;
  a.system_dropout = row.system_dropout;
  a.zodiac_dropout = row.zodiac_dropout;
  a.zoneout = row.zoneout;
  a.gate = row.gate;
  a.piv_enabled = true;
  if (row.gelu_removed) {
    a.gelu = GeluSites::all(false);
    cfg.model.ffn_activation = FfnActivation::relu;
  }
  return cfg;
}

std::optional<RunConfig> find_preset(std::string_view name) {
  auto c = toy_copy_config();
  if (name == "toy_copy" || name == "zodiac-sigmoid") return c;
  if (name == "zodiac-tanh") {
    c.model.attention.gate = GateKind::tanh;
    return c;
  }
  if (name == "baseline") {
    c.model.attention_kind = AttentionKind::baseline;
    return c;
  }
  const auto& rows = ablation_rows();
  if (name == "table4-best") return apply_ablation_row(c, rows[19]);
  if (name == "table4-dagger") return apply_ablation_row(c, rows[13]);
  for (const auto& r : rows) {
    if (r.name == name) return apply_ablation_row(c, r);
  }
  return std::nullopt;
}

std::vector<std::string> preset_names() {
  std::vector<std::string> n{"toy_copy", "zodiac-sigmoid", "zodiac-tanh", "baseline", "table4-best", "table4-dagger"};
  for (const auto& r : ablation_rows()) n.push_back(r.name);
  return n;
}

}  // namespace zodiac
