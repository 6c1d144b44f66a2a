#include "zodiac/task.hpp"

#include <algorithm>
#include <numeric>

#include "zodiac/errors.hpp"
#include "zodiac/random.hpp"

namespace zodiac {

std::string_view to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::copy: return "copy";
    case TaskKind::reverse: return "reverse";
    case TaskKind::sort: return "sort";
  }
  return "unknown";
}

std::optional<TaskKind> parse_task_kind(std::string_view name) {
  if (name == "copy") return TaskKind::copy;
  if (name == "reverse") return TaskKind::reverse;
  if (name == "sort") return TaskKind::sort;
  return std::nullopt;
}

void TaskSpec::validate() const {
  if (vocab_size <= static_cast<std::size_t>(kReservedIds)) {
    throw ConfigError("vocab_size", "must exceed the reserved pad/bos/eos ids");
  }
  if (seq_len < 1) throw ConfigError("seq_len", "must be >= 1");
  if (n_train < 1) throw ConfigError("n_train", "must be >= 1");
  if (n_eval < 1) throw ConfigError("n_eval", "must be >= 1");
}

std::vector<int> task_target(TaskKind kind, const std::vector<int>& source) {
  std::vector<int> t = source;
  if (kind == TaskKind::reverse) std::reverse(t.begin(), t.end());
  if (kind == TaskKind::sort) std::sort(t.begin(), t.end());
  return t;
}

TaskData gen_task(const TaskSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const auto symbols = spec.vocab_size - kReservedIds;
  auto draw = [&](std::size_t n) {
    std::vector<Example> out(n);
    for (auto& ex : out) {
      ex.source.resize(spec.seq_len);
      for (auto& id : ex.source) id = kReservedIds + static_cast<int>(rng.below(symbols));
      ex.target = task_target(spec.kind, ex.source);
    }
    return out;
  };
  TaskData data;
  data.train = draw(spec.n_train);
  data.eval = draw(spec.n_eval);
  return data;
}

TokenBatch make_batch(const std::vector<Example>& examples, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ContractError("make_batch with no examples");
  TokenBatch b;
  b.batch = indices.size();
  for (auto i : indices) {
    const auto& ex = examples.at(i);
    if (ex.source.empty()) throw ContractError("example with empty source");
    b.src_len = std::max(b.src_len, ex.source.size());
    b.tgt_len = std::max(b.tgt_len, ex.target.size() + 1);
  }
  b.src.assign(b.batch * b.src_len, kPadId);
  b.tgt.assign(b.batch * b.tgt_len, kPadId);
  b.labels.assign(b.batch * b.tgt_len, kPadId);
  for (std::size_t r = 0; r < b.batch; ++r) {
    const auto& ex = examples[indices[r]];
    std::copy(ex.source.begin(), ex.source.end(), b.src.begin() + r * b.src_len);
    b.tgt[r * b.tgt_len] = kBosId;
    std::copy(ex.target.begin(), ex.target.end(), b.tgt.begin() + r * b.tgt_len + 1);
    std::copy(ex.target.begin(), ex.target.end(), b.labels.begin() + r * b.tgt_len);
    b.labels[r * b.tgt_len + ex.target.size()] = kEosId;
    b.src_lengths.push_back(ex.source.size());
    b.tgt_lengths.push_back(ex.target.size() + 1);
  }
  return b;
}

TokenBatch make_batch(const std::vector<Example>& examples) {
  std::vector<std::size_t> idx(examples.size());
  std::iota(idx.begin(), idx.end(), 0);
  return make_batch(examples, idx);
}

}  // namespace zodiac
