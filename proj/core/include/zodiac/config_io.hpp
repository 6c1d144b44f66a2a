#pragma once

// JSON (de)serialization of the run configuration. Parsing overlays the
// document on a base config, so partial files are allowed; unknown keys and
// ill-typed values raise ConfigError naming the dotted field path.

#include <string>
#include <string_view>

#include "zodiac/model.hpp"
#include "zodiac/task.hpp"
#include "zodiac/train.hpp"

namespace zodiac {

struct RunConfig {
  ModelConfig model;
  TaskSpec task;
  TrainConfig train;
  bool operator==(const RunConfig&) const = default;
};

std::string to_json_string(const RunConfig& cfg, int indent = 2);
std::string to_json_string(const ModelConfig& cfg, int indent = -1);
std::string to_json_string(const TaskSpec& spec, int indent = -1);
std::string to_json_string(const TrainConfig& cfg, int indent = -1);

RunConfig parse_run_config(std::string_view text, const RunConfig& base);
ModelConfig parse_model_config(std::string_view text, const ModelConfig& base);
TaskSpec parse_task_spec(std::string_view text, const TaskSpec& base);
TrainConfig parse_train_config(std::string_view text, const TrainConfig& base);

}  // namespace zodiac
