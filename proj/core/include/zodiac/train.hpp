#pragma once

// Teacher-forced cross-entropy training with Adam and a stagewise learning
// rate decay, plus evaluation metrics.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "zodiac/model.hpp"
#include "zodiac/params.hpp"
#include "zodiac/task.hpp"

namespace zodiac {

/// Only cross-entropy is implemented; the field makes the absence of
/// self-critical (REINFORCE) training explicit in every config.
enum class LossKind { cross_entropy };

/// Which epochs the learning rate decays at.
enum class DecayAnchor {
  /// Epochs decay_every, 2*decay_every, ... (epochs 0..decay_every-1 at base).
  multiples,
  /// Epoch 1, then every decay_every epochs after it.
  first_epoch,
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool operator==(const AdamConfig&) const = default;
};

struct TrainConfig {
  double base_lr = 5e-4;
  double decay_factor = 0.8;
  std::size_t decay_every = 3;
  DecayAnchor decay_anchor = DecayAnchor::multiples;
  std::size_t max_epochs = 30;
  /// 0 = bounded by epochs only.
  std::size_t max_steps = 0;
  std::size_t batch_size = 20;
  AdamConfig adam;
  std::uint64_t seed = 0;
  /// Save a checkpoint every N epochs; 0 disables.
  std::size_t checkpoint_every = 0;
  std::size_t eval_beam_size = 1;
  /// Stop after the first epoch whose eval token accuracy reaches this.
  std::optional<double> target_accuracy;
  LossKind loss = LossKind::cross_entropy;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch);

/// Mean negative log-likelihood over non-pad label positions.
/// logits: [batch, len, vocab]; labels: batch*len ids.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels, int pad_id = kPadId);

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update of every parameter from its gradient. A
/// parameter without a gradient is treated as having a zero gradient.
void adam_step(ParamStore& params, AdamState& state, const AdamConfig& cfg, double lr);

struct Metrics {
  double token_accuracy = 0.0;
  double exact_match = 0.0;
  double cross_entropy = 0.0;
};

struct Score {
  double token_accuracy = 0.0;
  double exact_match = 0.0;
};

/// Position-wise comparison against references with pad positions removed.
/// Missing predicted positions count as wrong.
Score score_predictions(const std::vector<std::vector<int>>& predictions,
                        const std::vector<std::vector<int>>& references, int pad_id = kPadId);

/// Decodes every source (greedy for beam 1, beam search otherwise) and
/// scores against the labels; cross-entropy is teacher-forced, eval mode.
Metrics evaluate(const ParamStore& params, const ModelConfig& cfg, const TokenBatch& batch,
                 std::size_t beam_size);
Metrics evaluate(const ParamStore& params, const ModelConfig& cfg, const std::vector<Example>& dataset,
                 std::size_t beam_size);

struct EpochRecord {
  std::size_t epoch = 0;
  std::uint64_t steps = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  Metrics eval;
};

/// Tab-separated, fixed precision; the header starts with '#'.
std::string metric_log_header();
std::string format_epoch_record(const EpochRecord& record);

struct TrainState {
  AdamState adam;
  std::size_t next_epoch = 0;
  std::uint64_t step = 0;
  std::vector<EpochRecord> log;
};

struct TrainOptions {
  /// Metric log file; empty disables.
  std::string log_path;
  /// Directory for per-cadence checkpoints; empty disables.
  std::string checkpoint_dir;
  /// Continue from a checkpoint written by train().
  std::string resume_from;
  /// Stop (as if interrupted) once this many epochs have completed.
  std::optional<std::size_t> stop_after_epochs;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  ParamStore params;
  TrainState state;
  bool reached_target = false;
};

/// Throws DivergenceError naming the step on a non-finite loss.
TrainResult train(const ModelConfig& model_cfg, const TaskSpec& task, const TrainConfig& train_cfg,
                  const TrainOptions& options = {});

}  // namespace zodiac
