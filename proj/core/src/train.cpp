#include "zodiac/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "zodiac/checkpoint.hpp"
#include "zodiac/errors.hpp"
#include "zodiac/random.hpp"

namespace zodiac {

void TrainConfig::validate() const {
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw ConfigError("base_lr", "must be > 0");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw ConfigError("decay_factor", "must be in (0, 1]");
  if (decay_every < 1) throw ConfigError("decay_every", "must be >= 1");
  if (max_epochs < 1) throw ConfigError("max_epochs", "must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size", "must be >= 1");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0)) throw ConfigError("adam.beta1", "must be in [0, 1)");
  if (!(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) throw ConfigError("adam.beta2", "must be in [0, 1)");
  if (!(adam.eps > 0.0)) throw ConfigError("adam.eps", "must be > 0");
  if (eval_beam_size < 1) throw ConfigError("eval_beam_size", "must be >= 1");
  if (target_accuracy && !(*target_accuracy >= 0.0 && *target_accuracy <= 1.0)) {
    throw ConfigError("target_accuracy", "must be in [0, 1]");
  }
}

double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch) {
  std::size_t stages = 0;
  if (cfg.decay_anchor == DecayAnchor::multiples) {
    stages = epoch / cfg.decay_every;
  } else if (epoch > 0) {
    stages = (epoch - 1) / cfg.decay_every + 1;
  }
  // Repeated multiplication: 5e-4 * 0.8 * 0.8 lands exactly on 3.2e-4, pow() does not.
  double lr = cfg.base_lr;
  for (std::size_t s = 0; s < stages; ++s) lr *= cfg.decay_factor;
  return lr;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels, int pad_id) {
  if (logits.rank() != 3) throw ShapeError("cross_entropy expects [batch, len, vocab] logits, got " + shape_str(logits.shape()));
  const auto vocab = logits.dim(-1);
  const auto rows = logits.numel() / vocab;
  if (labels.size() != rows) throw ShapeError("cross_entropy: label count does not match logits");
  std::size_t count = 0;
  for (int id : labels) {
    if (id == pad_id) continue;
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) throw ContractError("cross_entropy: label out of range");
    ++count;
  }
  if (count == 0) throw ContractError("cross_entropy: every label position is padding");

  const auto x = logits.data();
  std::vector<double> probs(logits.numel(), 0.0);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (labels[r] == pad_id) continue;
    const double* row = x.data() + r * vocab;
    const double mx = *std::max_element(row, row + vocab);
    double z = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    total += lse - row[labels[r]];
    for (std::size_t j = 0; j < vocab; ++j) probs[r * vocab + j] = std::exp(row[j] - lse);
  }
  const double n = static_cast<double>(count);
  return make_result({}, {total / n}, {logits}, "cross_entropy",
                     [in = logits.node(), probs = std::move(probs), labels, pad_id, vocab, rows, n](
                         std::span<const double>, std::span<const double> g) {
                       auto gi = in->grad_buffer();
                       const double s = g[0] / n;
                       for (std::size_t r = 0; r < rows; ++r) {
                         if (labels[r] == pad_id) continue;
                         for (std::size_t j = 0; j < vocab; ++j) gi[r * vocab + j] += s * probs[r * vocab + j];
                         gi[r * vocab + labels[r]] -= s;
                       }
                     });
}

void adam_step(ParamStore& params, AdamState& state, const AdamConfig& cfg, double lr) {
  if (state.m.empty()) {
    for (const auto& [name, t] : params) {
      state.m.emplace_back(t.numel(), 0.0);
      state.v.emplace_back(t.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ContractError("adam_step: optimizer state does not match parameters");
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  std::size_t k = 0;
  for (auto& [name, t] : params) {
    auto& m = state.m[k];
    auto& v = state.v[k];
    ++k;
    if (m.size() != t.numel()) throw ContractError("adam_step: state size mismatch for " + name);
    auto w = t.mutable_data();
    const bool has = t.has_grad();
    const auto g = t.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = has ? g[i] : 0.0;
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mh = m[i] / c1;
      const double vh = v[i] / c2;
      w[i] -= lr * mh / (std::sqrt(vh) + cfg.eps);
    }
  }
}

Score score_predictions(const std::vector<std::vector<int>>& predictions,
                        const std::vector<std::vector<int>>& references, int pad_id) {
  if (predictions.size() != references.size()) throw ContractError("score_predictions: count mismatch");
  if (references.empty()) throw ContractError("score_predictions: empty dataset");
  std::size_t tokens = 0, correct = 0, exact = 0;
  for (std::size_t s = 0; s < references.size(); ++s) {
    std::vector<int> ref, pred;
    std::copy_if(references[s].begin(), references[s].end(), std::back_inserter(ref), [&](int id) { return id != pad_id; });
    std::copy_if(predictions[s].begin(), predictions[s].end(), std::back_inserter(pred), [&](int id) { return id != pad_id; });
    for (std::size_t i = 0; i < ref.size(); ++i) {
      if (i < pred.size() && pred[i] == ref[i]) ++correct;
    }
    tokens += ref.size();
    if (pred == ref) ++exact;
  }
  Score sc;
  sc.token_accuracy = tokens ? static_cast<double>(correct) / static_cast<double>(tokens) : 0.0;
  sc.exact_match = static_cast<double>(exact) / static_cast<double>(references.size());
  return sc;
}

Metrics evaluate(const ParamStore& params, const ModelConfig& cfg, const TokenBatch& batch, std::size_t beam_size) {
  if (beam_size < 1) throw ContractError("evaluate: beam_size must be >= 1");
  if (batch.batch == 0) throw ContractError("evaluate: empty dataset");
  batch.validate(cfg.vocab_size);
  if (batch.labels.size() != batch.batch * batch.tgt_len) throw ContractError("evaluate: batch has no labels");

  std::vector<std::vector<int>> refs(batch.batch);
  std::size_t steps = 0;
  for (std::size_t r = 0; r < batch.batch; ++r) {
    const auto* row = batch.labels.data() + r * batch.tgt_len;
    refs[r].assign(row, row + batch.tgt_lengths[r]);
    steps = std::max(steps, refs[r].size());
  }

  std::vector<std::vector<int>> preds;
  if (beam_size == 1) {
    preds = greedy_decode_batch(params, cfg, batch, steps);
  } else {
    for (std::size_t r = 0; r < batch.batch; ++r) {
      const auto* row = batch.src.data() + r * batch.src_len;
      preds.push_back(decode(params, cfg, std::vector<int>(row, row + batch.src_lengths[r]), beam_size, steps));
    }
  }
  const auto sc = score_predictions(preds, refs);

  Metrics m;
  m.token_accuracy = sc.token_accuracy;
  m.exact_match = sc.exact_match;
  NoGradGuard no_grad;
  m.cross_entropy = cross_entropy(model_forward(params, cfg, batch, RunContext{Mode::eval, 0, 0}), batch.labels).item();
  return m;
}

Metrics evaluate(const ParamStore& params, const ModelConfig& cfg, const std::vector<Example>& dataset,
                 std::size_t beam_size) {
  if (dataset.empty()) throw ContractError("evaluate: empty dataset");
  return evaluate(params, cfg, make_batch(dataset), beam_size);
}

std::string metric_log_header() {
  return "# epoch\tsteps\tlr\ttrain_loss\teval_token_accuracy\teval_exact_match\teval_cross_entropy";
}

std::string format_epoch_record(const EpochRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu\t%llu\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g", r.epoch,
                static_cast<unsigned long long>(r.steps), r.lr, r.train_loss, r.eval.token_accuracy,
                r.eval.exact_match, r.eval.cross_entropy);
  return buf;
}

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(mix(seed, epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  return idx;
}

std::string checkpoint_name(const std::string& dir, std::size_t epochs_done) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "epoch_%04zu.zdck", epochs_done);
  return (std::filesystem::path(dir) / buf).string();
}

}  // namespace

TrainResult train(const ModelConfig& model_cfg, const TaskSpec& task, const TrainConfig& train_cfg,
                  const TrainOptions& options) {
  model_cfg.validate();
  task.validate();
  train_cfg.validate();
  if (task.vocab_size != model_cfg.vocab_size) throw ConfigError("task.vocab_size", "must equal model.vocab_size");
  if (task.seq_len + 1 > model_cfg.max_len) throw ConfigError("task.seq_len", "framed sequences exceed model.max_len");

  const auto data = gen_task(task);
  TrainResult result;
  if (!options.resume_from.empty()) {
    auto ck = load_checkpoint(options.resume_from);
    if (!(ck.model == model_cfg)) throw ConfigError("resume_from", "checkpoint model config differs");
    if (!ck.state) throw ConfigError("resume_from", "checkpoint carries no training state");
    result.params = std::move(ck.params);
    result.state = std::move(*ck.state);
  } else {
    result.params = init_params(model_cfg);
  }
  auto& params = result.params;
  auto& st = result.state;

  std::ofstream log;
  if (!options.log_path.empty()) {
    log.open(options.log_path, std::ios::out | std::ios::trunc);
    if (!log) throw ContractError("cannot open metric log " + options.log_path);
    log << metric_log_header() << '\n';
    for (const auto& r : st.log) log << format_epoch_record(r) << '\n';
    log.flush();
  }
  if (!options.checkpoint_dir.empty()) std::filesystem::create_directories(options.checkpoint_dir);

  for (const auto& r : st.log) {
    if (train_cfg.target_accuracy && r.eval.token_accuracy >= *train_cfg.target_accuracy) result.reached_target = true;
  }

  std::size_t epochs_this_call = 0;
  const std::size_t n = data.train.size();
  while (st.next_epoch < train_cfg.max_epochs && !result.reached_target) {
    if (train_cfg.max_steps && st.step >= train_cfg.max_steps) break;
    if (options.stop_after_epochs && epochs_this_call >= *options.stop_after_epochs) break;

    const std::size_t epoch = st.next_epoch;
    const double lr = lr_at_epoch(train_cfg, epoch);
    const auto order = epoch_order(n, train_cfg.seed, epoch);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < n; begin += train_cfg.batch_size) {
      if (train_cfg.max_steps && st.step >= train_cfg.max_steps) break;
      const std::size_t end = std::min(n, begin + train_cfg.batch_size);
      const auto batch = make_batch(data.train, {order.begin() + static_cast<long>(begin), order.begin() + static_cast<long>(end)});
      const RunContext ctx{Mode::train, train_cfg.seed, st.step};
      params.zero_grad();
      const auto loss = cross_entropy(model_forward(params, model_cfg, batch, ctx), batch.labels);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw DivergenceError(static_cast<long>(st.step), "non-finite loss at step " + std::to_string(st.step));
      }
      loss.backward();
      adam_step(params, st.adam, train_cfg.adam, lr);
      ++st.step;
      loss_sum += value;
      ++batches;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.steps = st.step;
    rec.lr = lr;
    rec.train_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
    rec.eval = evaluate(params, model_cfg, data.eval, train_cfg.eval_beam_size);
    st.log.push_back(rec);
    st.next_epoch = epoch + 1;
    ++epochs_this_call;
    if (log) {
      log << format_epoch_record(rec) << '\n';
      log.flush();
    }
    if (options.on_epoch) options.on_epoch(rec);
    if (train_cfg.target_accuracy && rec.eval.token_accuracy >= *train_cfg.target_accuracy) result.reached_target = true;

    if (!options.checkpoint_dir.empty() && train_cfg.checkpoint_every && st.next_epoch % train_cfg.checkpoint_every == 0) {
      save_checkpoint(checkpoint_name(options.checkpoint_dir, st.next_epoch),
                      Checkpoint{model_cfg, params, train_cfg, task, st});
    }
  }
  return result;
}

}  // namespace zodiac
