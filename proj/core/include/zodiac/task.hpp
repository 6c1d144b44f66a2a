#pragma once

// Synthetic sequence-to-sequence tasks.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "zodiac/model.hpp"

namespace zodiac {

enum class TaskKind { copy, reverse, sort };

std::string_view to_string(TaskKind kind);
std::optional<TaskKind> parse_task_kind(std::string_view name);

struct TaskSpec {
  TaskKind kind = TaskKind::copy;
  std::size_t vocab_size = 16;
  std::size_t seq_len = 10;
  std::size_t n_train = 6400;
  std::size_t n_eval = 256;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const TaskSpec&) const = default;
};

/// Payload ids only; framing is added when batching.
struct Example {
  std::vector<int> source;
  std::vector<int> target;
};

struct TaskData {
  std::vector<Example> train;
  std::vector<Example> eval;
};

/// Target payload for a source under `kind`.
std::vector<int> task_target(TaskKind kind, const std::vector<int>& source);

/// Sources drawn uniformly from the non-reserved ids; reproducible from the seed.
TaskData gen_task(const TaskSpec& spec);

/// Pads to the longest sequence: tgt = [bos, target...], labels = [target..., eos].
TokenBatch make_batch(const std::vector<Example>& examples, const std::vector<std::size_t>& indices);
TokenBatch make_batch(const std::vector<Example>& examples);

}  // namespace zodiac
