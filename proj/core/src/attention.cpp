#include "zodiac/attention.hpp"

#include <cmath>
#include <string>

#include "zodiac/errors.hpp"
#include "zodiac/ops.hpp"
#include "zodiac/random.hpp"

namespace zodiac {

namespace {

void require_rate(const std::string& field, double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError(field, "dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
}

void require_attention_shapes(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.rank() < 2 || k.rank() < 2 || v.rank() < 2) throw ShapeError("attention operands need rank >= 2");
  if (q.dim(-1) != k.dim(-1)) {
    throw ShapeError("query/key feature dims differ: " + shape_str(q.shape()) + " vs " +
                     shape_str(k.shape()));
  }
  if (k.dim(-2) != v.dim(-2)) {
    throw ShapeError("key/value lengths differ: " + shape_str(k.shape()) + " vs " + shape_str(v.shape()));
  }
}

Shape score_shape(const Tensor& q, const Tensor& k) {
  Shape s = q.shape();
  s.back() = k.dim(-2);
  return s;
}

std::string site_name(std::string_view prefix, std::string_view leaf) {
  std::string s(prefix);
  s += '.';
  s += leaf;
  return s;
}

}  // namespace

AttentionConfig AttentionConfig::sized(std::size_t d_model, std::size_t heads) {
  AttentionConfig cfg;
  cfg.d_model = d_model;
  cfg.heads = heads;
  cfg.d_k = heads ? d_model / heads : 0;
  cfg.d_v = cfg.d_k;
  return cfg;
}

void AttentionConfig::validate() const {
  if (heads < 1) throw ConfigError("heads", "must be >= 1");
  if (d_model < 1) throw ConfigError("d_model", "must be >= 1");
  if (d_model != heads * d_k) {
    throw ConfigError("d_k", "d_model (" + std::to_string(d_model) + ") must equal heads * d_k (" +
                                 std::to_string(heads) + " * " + std::to_string(d_k) + ")");
  }
  if (d_model != heads * d_v) throw ConfigError("d_v", "d_model must equal heads * d_v");
  if (piv_enabled && d_k != d_v) throw ConfigError("d_v", "PIV needs d_k == d_v");
  require_rate("system_dropout", system_dropout);
  require_rate("zodiac_dropout", zodiac_dropout);
  if (!std::isfinite(zoneout)) throw ConfigError("zoneout", "must be finite");
}

AttentionParams make_attention_params(const AttentionConfig& cfg, bool past_query, Rng& rng) {
  const std::size_t d = cfg.d_model;
  auto bias = [&]() { return cfg.use_bias ? Tensor::zeros({d}, true) : Tensor(); };
  AttentionParams p;
  p.wq1 = rng.xavier_uniform(d, d);
  p.bq1 = bias();
  if (past_query) {
    p.wq2 = rng.xavier_uniform(d, d);
    p.bq2 = bias();
  }
  p.wk = rng.xavier_uniform(d, d);
  p.bk = bias();
  p.wv = rng.xavier_uniform(d, d);
  p.bv = bias();
  p.wo = rng.xavier_uniform(cfg.heads * cfg.d_v, d);
  p.bo = bias();
  return p;
}

Tensor refine(const Tensor& x, const AttentionConfig& cfg) {
  return cfg.gelu_form == GeluForm::exact ? gelu_exact(x) : gelu_approx(x);
}

Tensor split_heads(const Tensor& x, std::size_t heads) {
  if (x.rank() != 3 || x.dim(-1) % heads != 0) {
    throw ShapeError("split_heads expects [B, L, H*d], got " + shape_str(x.shape()));
  }
  const std::size_t b = x.dim(0);
  const std::size_t l = x.dim(1);
  const std::size_t d = x.dim(2) / heads;
  return permute(reshape(x, {b, l, heads, d}), {0, 2, 1, 3});
}

Tensor merge_heads(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("merge_heads expects [B, H, L, d], got " + shape_str(x.shape()));
  const std::size_t b = x.dim(0);
  const std::size_t h = x.dim(1);
  const std::size_t l = x.dim(2);
  const std::size_t d = x.dim(3);
  return reshape(permute(x, {0, 2, 1, 3}), {b, l, h * d});
}

Tensor sdpa_baseline(const Tensor& q, const Tensor& k, const Tensor& v, const MaskSet& mask) {
  require_attention_shapes(q, k, v);
  mask.require_nonempty_rows(score_shape(q, k));
  const double scale = std::sqrt(static_cast<double>(q.dim(-1)));
  auto scores = div_scalar(matmul(q, transpose_last2(k)), scale);
  auto weights = softmax_last(masked_fill_additive(scores, mask));
  return matmul(weights, v);
}

Tensor rca_map(const Tensor& q1, const Tensor& k, const MaskSet& mask, const AttentionConfig& cfg) {
  if (q1.dim(-1) != k.dim(-1)) {
    throw ShapeError("query/key feature dims differ: " + shape_str(q1.shape()) + " vs " +
                     shape_str(k.shape()));
  }
  mask.require_nonempty_rows(score_shape(q1, k));
  const double scale = std::sqrt(static_cast<double>(q1.dim(-1)));
  Tensor q = cfg.gelu.on_qk ? refine(q1, cfg) : q1;
  Tensor kt = transpose_last2(k);
  if (cfg.gelu.on_qk) kt = refine(kt, cfg);
  auto scores = div_scalar(matmul(q, kt), scale);
  if (cfg.gelu.post_scale) scores = refine(scores, cfg);
  return softmax_last(masked_fill_additive(scores, mask));
}

Tensor rca(const Tensor& q1, const Tensor& k, const Tensor& v, const MaskSet& mask,
           const AttentionConfig& cfg, const RunContext& ctx, std::string_view site) {
  require_attention_shapes(q1, k, v);
  auto map = rca_map(q1, k, mask, cfg);
  auto values = matmul(map, cfg.gelu.on_v ? refine(v, cfg) : v);
  return dropout_apply(values, ctx.dropout(cfg.zodiac_dropout, site));
}

Tensor piv_map(const Tensor& q2, const Tensor& v, const AttentionConfig& cfg) {
  if (q2.rank() < 2 || v.rank() < 2) throw ShapeError("piv_map operands need rank >= 2");
  if (q2.dim(-1) != v.dim(-1)) {
    throw ShapeError("past query and value inner dims differ: " + shape_str(q2.shape()) + " vs " +
                     shape_str(v.shape()));
  }
  const bool g = cfg.gelu.piv_map;
  const double scale = std::sqrt(static_cast<double>(v.dim(-1)));
  Tensor q = g ? refine(q2, cfg) : q2;
  Tensor vt = transpose_last2(v);
  if (g) vt = refine(vt, cfg);
  auto map = div_scalar(matmul(q, vt), scale);
  return g ? refine(map, cfg) : map;
}

Tensor rap(const Tensor& map, const MaskSet& mask) { return masked_mean(map, mask); }

Tensor piv(const Tensor& q2, const Tensor& v, const MaskSet& mask, const AttentionConfig& cfg,
           PivPooling pooling) {
  auto map = piv_map(q2, v, cfg);
  Shape lead(map.shape().begin(), map.shape().end() - 2);
  Tensor pooled;
  if (pooling == PivPooling::per_head) {
    lead.push_back(1);
    lead.push_back(1);
    pooled = reshape(rap(map, mask), lead);
  } else {
    lead.push_back(map.dim(-2));
    lead.push_back(1);
    pooled = reshape(masked_prefix_mean(map, mask), lead);
  }
  return add_scalar(scalar_gate(pooled, cfg.gate), cfg.zoneout);
}

Tensor zodiac_head(const Tensor& q1, const Tensor& q2, const Tensor& k, const Tensor& v,
                   const MaskSet& mask, const AttentionConfig& cfg, const RunContext& ctx,
                   std::string_view site, PivPooling pooling, const MaskSet* pool_mask) {
  auto current = rca(q1, k, v, mask, cfg, ctx, site_name(site, "rca"));
  if (!cfg.piv_enabled) return current;
  return mul(current, piv(q2, v, pool_mask ? *pool_mask : mask, cfg, pooling));
}

Tensor zmha(const Tensor& query, const Tensor& key, const Tensor& value, const MaskSet& mask,
            const AttentionParams& params, const AttentionConfig& cfg, const RunContext& ctx,
            std::string_view site, PivPooling pooling, const MaskSet* pool_mask) {
  if (query.rank() != 3 || key.rank() != 3 || value.rank() != 3) {
    throw ShapeError("zmha expects [B, L, d_model] inputs");
  }
  if (query.dim(-1) != cfg.d_model || key.dim(-1) != cfg.d_model || value.dim(-1) != cfg.d_model) {
    throw ShapeError("zmha input width does not match d_model " + std::to_string(cfg.d_model));
  }
  if (cfg.piv_enabled && !params.has_past_query()) {
    throw ContractError("zmha with PIV enabled needs the past-query projection");
  }
  // Refine each distinct input once; self-attention passes one tensor three times.
  auto pre = [&](const Tensor& x) { return cfg.gelu.pre_linear ? refine(x, cfg) : x; };
  const Tensor gq = pre(query);
  const Tensor gk = key.node() == query.node() ? gq : pre(key);
  const Tensor gv = value.node() == query.node() ? gq : value.node() == key.node() ? gk : pre(value);

  const std::size_t h = cfg.heads;
  auto q1 = split_heads(linear(gq, params.wq1, params.bq1), h);
  auto k = split_heads(linear(gk, params.wk, params.bk), h);
  auto v = split_heads(linear(gv, params.wv, params.bv), h);
  Tensor q2;
  if (cfg.piv_enabled) q2 = split_heads(linear(gq, params.wq2, params.bq2), h);
  auto heads = zodiac_head(q1, q2, k, v, mask, cfg, ctx, site, pooling, pool_mask);
  return linear(merge_heads(heads), params.wo, params.bo);
}

Tensor mha_baseline(const Tensor& query, const Tensor& key, const Tensor& value, const MaskSet& mask,
                    const AttentionParams& params, const AttentionConfig& cfg) {
  if (query.rank() != 3 || key.rank() != 3 || value.rank() != 3) {
    throw ShapeError("mha expects [B, L, d_model] inputs");
  }
  const std::size_t h = cfg.heads;
  auto q = split_heads(linear(query, params.wq1, params.bq1), h);
  auto k = split_heads(linear(key, params.wk, params.bk), h);
  auto v = split_heads(linear(value, params.wv, params.bv), h);
  return linear(merge_heads(sdpa_baseline(q, k, v, mask)), params.wo, params.bo);
}

std::size_t extra_param_count(const AttentionConfig& cfg) {
  return cfg.d_model * cfg.d_model + (cfg.use_bias ? cfg.d_model : 0);
}

ExtraParams extra_param_count(const AttentionConfig& cfg, std::size_t encoder_layers,
                              std::size_t decoder_layers) {
  ExtraParams e;
  e.per_instance = extra_param_count(cfg);
  e.instances = encoder_layers + 2 * decoder_layers;
  e.total = e.per_instance * e.instances;
  return e;
}

}  // namespace zodiac
