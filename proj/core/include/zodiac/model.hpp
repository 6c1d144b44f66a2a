#pragma once

// Toy encoder-decoder Transformer (post-norm) whose attention blocks are
// either baseline MHA or ZMHA.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "zodiac/activations.hpp"
#include "zodiac/attention.hpp"
#include "zodiac/mask.hpp"
#include "zodiac/params.hpp"
#include "zodiac/tensor.hpp"

namespace zodiac {

inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kReservedIds = 3;

enum class AttentionKind { baseline, zodiac };
enum class FfnActivation { gelu, relu };
enum class AttentionBlock { encoder_self, decoder_self, decoder_cross };

std::string_view to_string(AttentionKind kind);

struct ModelConfig {
  std::size_t vocab_size = 16;
  std::size_t d_model = 512;
  std::size_t heads = 8;
  std::size_t n_encoder_layers = 6;
  std::size_t n_decoder_layers = 6;
  std::size_t d_ff = 2048;
  AttentionKind attention_kind = AttentionKind::zodiac;
  AttentionConfig attention;
  std::size_t max_len = 64;
  std::uint64_t seed = 0;
  FfnActivation ffn_activation = FfnActivation::gelu;
  /// Per-block replacement of attention_kind.
  std::optional<AttentionKind> encoder_self_kind;
  std::optional<AttentionKind> decoder_self_kind;
  std::optional<AttentionKind> decoder_cross_kind;

  AttentionKind kind_for(AttentionBlock block) const;
  /// Copies d_model/heads into the attention config (d_k = d_v = d_model/heads).
  void sync_attention();
  /// Throws ConfigError.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

/// Source ids [batch, src_len], decoder input ids [batch, tgt_len] and
/// optional next-token labels of the same shape. Positions past a sequence's
/// length hold kPadId.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t src_len = 0;
  std::size_t tgt_len = 0;
  std::vector<int> src;
  std::vector<int> tgt;
  std::vector<int> labels;
  std::vector<std::size_t> src_lengths;
  std::vector<std::size_t> tgt_lengths;

  /// Throws ContractError on inconsistent sizes, ids >= vocab or non-pad
  /// entries past a length.
  void validate(std::size_t vocab_size) const;
};

struct BatchMasks {
  MaskSet src;    // key padding over the source
  MaskSet src_pool;  // query AND key padding; regional pooling in the encoder
  MaskSet tgt;    // causal AND target padding
  MaskSet cross;  // source padding broadcast over target rows
};

BatchMasks build_masks(const TokenBatch& batch);

/// Sinusoidal encoding [max_len, d_model]; d_model must be even.
Tensor positional_encoding(std::size_t max_len, std::size_t d_model);

/// Allocates and initializes every parameter: Xavier-uniform linear maps,
/// N(0, d_model^-1/2) embeddings, unit/zero layer norms.
ParamStore init_params(const ModelConfig& cfg);

/// Parameter name -> shape without allocating.
std::vector<std::pair<std::string, Shape>> param_layout(const ModelConfig& cfg);
std::size_t param_count(const ModelConfig& cfg);

/// Encoder output [batch, src_len, d_model].
Tensor encode(const ParamStore& params, const ModelConfig& cfg, const TokenBatch& batch,
              const BatchMasks& masks, const RunContext& ctx);

/// Decoder logits [batch, tgt_len, vocab] given encoder memory.
Tensor decode_logits(const ParamStore& params, const ModelConfig& cfg, const Tensor& memory,
                     const TokenBatch& batch, const BatchMasks& masks, const RunContext& ctx);

/// Teacher-forced logits [batch, tgt_len, vocab].
Tensor model_forward(const ParamStore& params, const ModelConfig& cfg, const TokenBatch& batch,
                     const RunContext& ctx);

/// Returns log-probabilities of the next token for each prefix (each prefix
/// starts with kBosId).
using StepFn = std::function<std::vector<std::vector<double>>(const std::vector<std::vector<int>>&)>;

/// Argmax decoding. Output excludes bos and ends with eos if one was produced.
std::vector<int> greedy_search(const StepFn& step, std::size_t max_steps);

/// Length-normalized beam search keeping `beam_size` live hypotheses per step.
std::vector<int> beam_search(const StepFn& step, std::size_t beam_size, std::size_t max_steps);

/// Eval-mode decoding of one source sequence; beam_size 1 is greedy.
std::vector<int> decode(const ParamStore& params, const ModelConfig& cfg, const std::vector<int>& source,
                        std::size_t beam_size, std::size_t max_steps);

/// Greedy decoding of every source in a batch at once.
std::vector<std::vector<int>> greedy_decode_batch(const ParamStore& params, const ModelConfig& cfg,
                                                  const TokenBatch& batch, std::size_t max_steps);

}  // namespace zodiac
