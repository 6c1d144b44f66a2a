#pragma once

// Checkpoint container: magic "ZDCK", u32 version, u64 header length, a JSON
// header (model config, tensor names/shapes, optional training state), then
// every tensor's f64 payload in little-endian order. Round trips are bit-exact.

#include <optional>
#include <string>

#include "zodiac/model.hpp"
#include "zodiac/params.hpp"
#include "zodiac/train.hpp"

namespace zodiac {

struct Checkpoint {
  ModelConfig model;
  ParamStore params;
  std::optional<TrainConfig> train_config;
  std::optional<TaskSpec> task;
  std::optional<TrainState> state;
};

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
/// Throws ContractError on a malformed or truncated file.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace zodiac
