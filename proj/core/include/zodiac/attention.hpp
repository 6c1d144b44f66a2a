#pragma once

// Scaled dot-product attention and the ZoDIAC variant.
//
// ZoDIAC scales the refined current attention (RCA) of every head by a past
// intensity value (PIV): a gated, regionally pooled mean of an intensity map
// built from a second "past" query projection and the values.
//
// Tensor layout inside a head is [batch, heads, L, d]; module inputs and
// outputs are [batch, L, d_model].

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "zodiac/activations.hpp"
#include "zodiac/mask.hpp"
#include "zodiac/tensor.hpp"

namespace zodiac {

class Rng;

/// Where GELU refinement is applied. All sites default on, as the
/// equations read literally.
struct GeluSites {
  bool pre_linear = true;  // on query/key/value before the projections
  bool on_qk = true;       // on Q1 and K inside the attention map
  bool post_scale = true;  // on the scaled Q1 K^T scores, before masking
  bool on_v = true;        // on V before it is weighted by the map
  bool piv_map = true;     // all three sites of the intensity map

  static GeluSites all(bool on) { return {on, on, on, on, on}; }
  bool any() const { return pre_linear || on_qk || post_scale || on_v || piv_map; }
  bool operator==(const GeluSites&) const = default;
};

enum class GeluForm { exact, approx };

struct AttentionConfig {
  std::size_t d_model = 512;
  std::size_t heads = 8;
  std::size_t d_k = 64;
  std::size_t d_v = 64;
  double system_dropout = 0.1;
  double zodiac_dropout = 0.2;
  double zoneout = 1.0;
  std::optional<GateKind> gate = GateKind::sigmoid;
  GeluSites gelu;
  GeluForm gelu_form = GeluForm::exact;
  bool piv_enabled = true;
  bool use_bias = true;

  /// Config with d_k = d_v = d_model / heads.
  static AttentionConfig sized(std::size_t d_model, std::size_t heads);

  /// Throws ConfigError naming the offending field.
  void validate() const;

  /// True when every ZoDIAC addition is off, so ZMHA reduces to baseline MHA.
  bool is_ablated() const { return !gelu.any() && zodiac_dropout == 0.0 && !piv_enabled; }

  bool operator==(const AttentionConfig&) const = default;
};

/// How the intensity map is pooled into PIV.
enum class PivPooling {
  /// One value per (batch, head) over the whole masked map.
  per_head,
  /// One value per (batch, head, query row i), pooling rows 0..i. Used
  /// wherever queries are produced autoregressively, so a position never
  /// sees intensity from later queries.
  query_prefix,
};

/// Projection weights stored [in, out]. `wq2`/`bq2` (the past-query
/// projection) exist only for ZMHA; biases are undefined when use_bias is off.
struct AttentionParams {
  Tensor wq1, bq1;
  Tensor wq2, bq2;
  Tensor wk, bk;
  Tensor wv, bv;
  Tensor wo, bo;

  bool has_past_query() const { return wq2.defined(); }
};

/// Xavier-uniform weights, zero biases.
AttentionParams make_attention_params(const AttentionConfig& cfg, bool past_query, Rng& rng);

/// The refinement function G selected by cfg.gelu_form.
Tensor refine(const Tensor& x, const AttentionConfig& cfg);

/// [B, L, H*d] -> [B, H, L, d]
Tensor split_heads(const Tensor& x, std::size_t heads);
/// [B, H, L, d] -> [B, L, H*d]
Tensor merge_heads(const Tensor& x);

/// softmax(Q K^T / sqrt(d_k) + mask) V
Tensor sdpa_baseline(const Tensor& q, const Tensor& k, const Tensor& v, const MaskSet& mask);

/// Softmax(mask(G(G(Q1) G(K^T) / sqrt(d_k)))). The mask is applied after the
/// outer G so masked weights are exactly zero.
Tensor rca_map(const Tensor& q1, const Tensor& k, const MaskSet& mask, const AttentionConfig& cfg);

/// Dropout_{zodiac}(rca_map(Q1, K) G(V)).
Tensor rca(const Tensor& q1, const Tensor& k, const Tensor& v, const MaskSet& mask,
           const AttentionConfig& cfg, const RunContext& ctx, std::string_view site = "rca");

/// G(G(Q2) G(V^T) / sqrt(d_v)); no softmax.
Tensor piv_map(const Tensor& q2, const Tensor& v, const AttentionConfig& cfg);

/// Regional attention pooling: masked mean of each [L_q, L_v] slice.
Tensor rap(const Tensor& map, const MaskSet& mask);

/// zeta + gate(RAP(piv_map(Q2, V))). Shape [B, H, 1, 1] for per_head pooling,
/// [B, H, L_q, 1] for query_prefix, ready to broadcast over RCA output.
Tensor piv(const Tensor& q2, const Tensor& v, const MaskSet& mask, const AttentionConfig& cfg,
           PivPooling pooling = PivPooling::per_head);

/// rca(Q1, K, V) * piv(Q2, V); just rca when PIV is disabled. PIV pools
/// under `pool_mask` when given (e.g. to also drop padded query rows),
/// otherwise under the attention mask.
Tensor zodiac_head(const Tensor& q1, const Tensor& q2, const Tensor& k, const Tensor& v,
                   const MaskSet& mask, const AttentionConfig& cfg, const RunContext& ctx,
                   std::string_view site = "zodiac", PivPooling pooling = PivPooling::per_head,
                   const MaskSet* pool_mask = nullptr);

/// ZoDIAC multi-head attention over [B, L, d_model] inputs.
Tensor zmha(const Tensor& query, const Tensor& key, const Tensor& value, const MaskSet& mask,
            const AttentionParams& params, const AttentionConfig& cfg, const RunContext& ctx,
            std::string_view site = "zmha", PivPooling pooling = PivPooling::per_head,
            const MaskSet* pool_mask = nullptr);

/// Standard multi-head attention; ignores wq2 and every ZoDIAC knob.
Tensor mha_baseline(const Tensor& query, const Tensor& key, const Tensor& value, const MaskSet& mask,
                    const AttentionParams& params, const AttentionConfig& cfg);

struct ExtraParams {
  std::size_t per_instance = 0;
  std::size_t instances = 0;
  std::size_t total = 0;
};

/// Parameters ZMHA adds over baseline MHA (the past-query projection).
std::size_t extra_param_count(const AttentionConfig& cfg);
/// Stack total: one ZMHA per encoder layer, two per decoder layer.
ExtraParams extra_param_count(const AttentionConfig& cfg, std::size_t encoder_layers,
                              std::size_t decoder_layers);

}  // namespace zodiac
