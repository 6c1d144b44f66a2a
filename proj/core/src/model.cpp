#include "zodiac/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "zodiac/errors.hpp"
#include "zodiac/ops.hpp"
#include "zodiac/random.hpp"

namespace zodiac {

namespace {

std::string layer_prefix(const char* stack, std::size_t i) { return std::string(stack) + "." + std::to_string(i); }

void add_attention_layout(std::vector<std::pair<std::string, Shape>>& out, const std::string& p,
                          const ModelConfig& cfg, AttentionKind kind) {
  const std::size_t d = cfg.d_model;
  const bool bias = cfg.attention.use_bias;
  auto proj = [&](const char* w, const char* b, std::size_t in) {
    out.emplace_back(p + "." + w, Shape{in, d});
    if (bias) out.emplace_back(p + "." + b, Shape{d});
  };
  proj("wq1", "bq1", d);
  if (kind == AttentionKind::zodiac) proj("wq2", "bq2", d);
  proj("wk", "bk", d);
  proj("wv", "bv", d);
  proj("wo", "bo", cfg.heads * cfg.attention.d_v);
}

void add_norm_layout(std::vector<std::pair<std::string, Shape>>& out, const std::string& p, std::size_t d) {
  out.emplace_back(p + ".gamma", Shape{d});
  out.emplace_back(p + ".beta", Shape{d});
}

void add_ffn_layout(std::vector<std::pair<std::string, Shape>>& out, const std::string& p,
                    const ModelConfig& cfg) {
  out.emplace_back(p + ".w1", Shape{cfg.d_model, cfg.d_ff});
  out.emplace_back(p + ".b1", Shape{cfg.d_ff});
  out.emplace_back(p + ".w2", Shape{cfg.d_ff, cfg.d_model});
  out.emplace_back(p + ".b2", Shape{cfg.d_model});
}

std::string leaf_name(const std::string& name) {
  const auto dot = name.rfind('.');
  return dot == std::string::npos ? name : name.substr(dot + 1);
}

AttentionParams attention_params(const ParamStore& params, const std::string& p) {
  AttentionParams a;
  a.wq1 = params.at(p + ".wq1");
  a.bq1 = params.get(p + ".bq1");
  a.wq2 = params.get(p + ".wq2");
  a.bq2 = params.get(p + ".bq2");
  a.wk = params.at(p + ".wk");
  a.bk = params.get(p + ".bk");
  a.wv = params.at(p + ".wv");
  a.bv = params.get(p + ".bv");
  a.wo = params.at(p + ".wo");
  a.bo = params.get(p + ".bo");
  return a;
}

Tensor attend(const ParamStore& params, const ModelConfig& cfg, AttentionBlock block, const std::string& p,
              const Tensor& query, const Tensor& kv, const MaskSet& mask, const RunContext& ctx,
              const MaskSet* pool_mask = nullptr) {
  const auto ap = attention_params(params, p);
  if (cfg.kind_for(block) == AttentionKind::baseline) {
    return mha_baseline(query, kv, kv, mask, ap, cfg.attention);
  }
  // Decoder queries are autoregressive: pool PIV over the query prefix only.
  const auto pooling = block == AttentionBlock::encoder_self ? PivPooling::per_head : PivPooling::query_prefix;
  return zmha(query, kv, kv, mask, ap, cfg.attention, ctx, p, pooling, pool_mask);
}

Tensor feed_forward(const ParamStore& params, const ModelConfig& cfg, const std::string& p, const Tensor& x) {
  auto h = linear(x, params.at(p + ".w1"), params.at(p + ".b1"));
  h = cfg.ffn_activation == FfnActivation::gelu ? gelu_exact(h) : relu(h);
  return linear(h, params.at(p + ".w2"), params.at(p + ".b2"));
}

Tensor residual_norm(const ParamStore& params, const ModelConfig& cfg, const std::string& p, const Tensor& x,
                     const Tensor& sublayer, const RunContext& ctx) {
  auto dropped = dropout_apply(sublayer, ctx.dropout(cfg.attention.system_dropout, p + ".drop"));
  return layer_norm(add(x, dropped), params.at(p + ".gamma"), params.at(p + ".beta"));
}

Tensor embed(const ParamStore& params, const ModelConfig& cfg, const char* table, const std::vector<int>& ids,
             std::size_t batch, std::size_t len, const RunContext& ctx, const char* site) {
  if (len > cfg.max_len) {
    throw ContractError("sequence length " + std::to_string(len) + " exceeds max_len " +
                        std::to_string(cfg.max_len));
  }
  auto x = embedding(params.at(table), ids, {batch, len});
  x = add(mul_scalar(x, std::sqrt(static_cast<double>(cfg.d_model))), positional_encoding(len, cfg.d_model));
  return dropout_apply(x, ctx.dropout(cfg.attention.system_dropout, site));
}

Tensor tile_batch(const Tensor& x, std::size_t copies) {
  const auto src = x.data();
  std::vector<double> out;
  out.reserve(src.size() * copies);
  for (std::size_t c = 0; c < copies; ++c) out.insert(out.end(), src.begin(), src.end());
  Shape shape = x.shape();
  shape[0] *= copies;
  return Tensor::from_data(std::move(shape), std::move(out));
}

std::vector<double> last_log_probs(const Tensor& logits, std::size_t b) {
  const std::size_t len = logits.dim(1);
  const std::size_t vocab = logits.dim(2);
  const double* row = logits.data().data() + (b * len + len - 1) * vocab;
  double mx = row[0];
  for (std::size_t j = 1; j < vocab; ++j) mx = std::max(mx, row[j]);
  double s = 0.0;
  for (std::size_t j = 0; j < vocab; ++j) s += std::exp(row[j] - mx);
  const double lse = mx + std::log(s);
  std::vector<double> out(vocab);
  for (std::size_t j = 0; j < vocab; ++j) out[j] = row[j] - lse;
  return out;
}

int argmax(const std::vector<double>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

TokenBatch prefix_batch(const TokenBatch& sources, const std::vector<std::vector<int>>& prefixes) {
  TokenBatch b;
  b.batch = prefixes.size();
  b.src_len = sources.src_len;
  b.tgt_len = prefixes.front().size();
  b.src_lengths = sources.src_lengths;
  b.src = sources.src;
  b.tgt.reserve(b.batch * b.tgt_len);
  for (const auto& p : prefixes) b.tgt.insert(b.tgt.end(), p.begin(), p.end());
  b.tgt_lengths.assign(b.batch, b.tgt_len);
  return b;
}

}  // namespace

std::string_view to_string(AttentionKind kind) { return kind == AttentionKind::zodiac ? "zodiac" : "baseline"; }

AttentionKind ModelConfig::kind_for(AttentionBlock block) const {
  switch (block) {
    case AttentionBlock::encoder_self: return encoder_self_kind.value_or(attention_kind);
    case AttentionBlock::decoder_self: return decoder_self_kind.value_or(attention_kind);
    case AttentionBlock::decoder_cross: return decoder_cross_kind.value_or(attention_kind);
  }
  return attention_kind;
}

void ModelConfig::sync_attention() {
  attention.d_model = d_model;
  attention.heads = heads;
  attention.d_k = heads ? d_model / heads : 0;
  attention.d_v = attention.d_k;
}

void ModelConfig::validate() const {
  if (vocab_size <= static_cast<std::size_t>(kReservedIds)) {
    throw ConfigError("vocab_size", "must exceed the " + std::to_string(kReservedIds) + " reserved ids");
  }
  if (d_model == 0 || d_model % 2 != 0) throw ConfigError("d_model", "must be positive and even");
  if (heads == 0 || d_model % heads != 0) throw ConfigError("heads", "must divide d_model");
  if (n_encoder_layers == 0) throw ConfigError("n_encoder_layers", "must be >= 1");
  if (n_decoder_layers == 0) throw ConfigError("n_decoder_layers", "must be >= 1");
  if (d_ff == 0) throw ConfigError("d_ff", "must be >= 1");
  if (max_len == 0) throw ConfigError("max_len", "must be >= 1");
  if (attention.d_model != d_model || attention.heads != heads) {
    throw ConfigError("attention", "d_model/heads disagree with the model");
  }
  attention.validate();
}

void TokenBatch::validate(std::size_t vocab_size) const {
  if (batch == 0 || src_len == 0 || tgt_len == 0) throw ContractError("empty token batch");
  if (src.size() != batch * src_len || tgt.size() != batch * tgt_len) {
    throw ContractError("token batch id arrays do not match [batch, len]");
  }
  if (!labels.empty() && labels.size() != tgt.size()) throw ContractError("labels must match tgt shape");
  if (src_lengths.size() != batch || tgt_lengths.size() != batch) {
    throw ContractError("token batch lengths do not match batch size");
  }
  auto check = [&](const std::vector<int>& ids, const std::vector<std::size_t>& lengths, std::size_t len,
                   const char* what) {
    for (std::size_t b = 0; b < batch; ++b) {
      if (lengths[b] == 0) throw ContractError(std::string(what) + " sequence of length 0");
      if (lengths[b] > len) throw ContractError(std::string(what) + " length exceeds padded length");
      for (std::size_t j = 0; j < len; ++j) {
        const int id = ids[b * len + j];
        if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
          throw ContractError(std::string(what) + " id " + std::to_string(id) + " outside vocabulary");
        }
        if (j >= lengths[b] && id != kPadId) throw ContractError(std::string(what) + " non-pad id past length");
      }
    }
  };
  check(src, src_lengths, src_len, "source");
  check(tgt, tgt_lengths, tgt_len, "target");
}

BatchMasks build_masks(const TokenBatch& batch) {
  BatchMasks m;
  m.src = MaskSet::padding(batch.src_lengths, batch.src_len);
  m.src_pool = m.src & MaskSet::padding_rows(batch.src_lengths, batch.src_len);
  m.tgt = MaskSet::combined(batch.tgt_lengths, batch.tgt_len);
  m.cross = MaskSet::cross(batch.src_lengths, batch.src_len, batch.tgt_len);
  return m;
}

Tensor positional_encoding(std::size_t max_len, std::size_t d_model) {
  if (d_model == 0 || d_model % 2 != 0) throw ContractError("positional encoding needs an even d_model");
  std::vector<double> pe(max_len * d_model);
  for (std::size_t pos = 0; pos < max_len; ++pos) {
    for (std::size_t i = 0; i < d_model / 2; ++i) {
      const double angle = static_cast<double>(pos) /
                           std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d_model));
      pe[pos * d_model + 2 * i] = std::sin(angle);
      pe[pos * d_model + 2 * i + 1] = std::cos(angle);
    }
  }
  return Tensor::from_data({max_len, d_model}, std::move(pe));
}

std::vector<std::pair<std::string, Shape>> param_layout(const ModelConfig& cfg) {
  std::vector<std::pair<std::string, Shape>> out;
  const std::size_t d = cfg.d_model;
  out.emplace_back("src_embed", Shape{cfg.vocab_size, d});
  out.emplace_back("tgt_embed", Shape{cfg.vocab_size, d});
  for (std::size_t i = 0; i < cfg.n_encoder_layers; ++i) {
    const auto p = layer_prefix("enc", i);
    add_attention_layout(out, p + ".self", cfg, cfg.kind_for(AttentionBlock::encoder_self));
    add_norm_layout(out, p + ".ln1", d);
    add_ffn_layout(out, p + ".ff", cfg);
    add_norm_layout(out, p + ".ln2", d);
  }
  for (std::size_t i = 0; i < cfg.n_decoder_layers; ++i) {
    const auto p = layer_prefix("dec", i);
    add_attention_layout(out, p + ".self", cfg, cfg.kind_for(AttentionBlock::decoder_self));
    add_norm_layout(out, p + ".ln1", d);
    add_attention_layout(out, p + ".cross", cfg, cfg.kind_for(AttentionBlock::decoder_cross));
    add_norm_layout(out, p + ".ln2", d);
    add_ffn_layout(out, p + ".ff", cfg);
    add_norm_layout(out, p + ".ln3", d);
  }
  out.emplace_back("out.w", Shape{d, cfg.vocab_size});
  out.emplace_back("out.b", Shape{cfg.vocab_size});
  return out;
}

std::size_t param_count(const ModelConfig& cfg) {
  std::size_t n = 0;
  for (const auto& [name, shape] : param_layout(cfg)) n += shape_numel(shape);
  return n;
}

ParamStore init_params(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  ParamStore params;
  const double embed_std = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
  for (auto& [name, shape] : param_layout(cfg)) {
    const auto leaf = leaf_name(name);
    Tensor t;
    if (name == "src_embed" || name == "tgt_embed") {
      t = rng.normal_tensor(shape, embed_std, true);
    } else if (leaf == "gamma") {
      t = Tensor::ones(shape, true);
    } else if (shape.size() == 1) {
      t = Tensor::zeros(shape, true);
    } else {
      t = rng.xavier_uniform(shape[0], shape[1]);
    }
    params.add(name, std::move(t));
  }
  return params;
}

Tensor encode(const ParamStore& params, const ModelConfig& cfg, const TokenBatch& batch, const BatchMasks& masks,
              const RunContext& ctx) {
  auto x = embed(params, cfg, "src_embed", batch.src, batch.batch, batch.src_len, ctx, "enc.emb");
  for (std::size_t i = 0; i < cfg.n_encoder_layers; ++i) {
    const auto p = layer_prefix("enc", i);
    auto a = attend(params, cfg, AttentionBlock::encoder_self, p + ".self", x, x, masks.src, ctx, &masks.src_pool);
    x = residual_norm(params, cfg, p + ".ln1", x, a, ctx);
    x = residual_norm(params, cfg, p + ".ln2", x, feed_forward(params, cfg, p + ".ff", x), ctx);
  }
  return x;
}

Tensor decode_logits(const ParamStore& params, const ModelConfig& cfg, const Tensor& memory,
                     const TokenBatch& batch, const BatchMasks& masks, const RunContext& ctx) {
  auto y = embed(params, cfg, "tgt_embed", batch.tgt, batch.batch, batch.tgt_len, ctx, "dec.emb");
  for (std::size_t i = 0; i < cfg.n_decoder_layers; ++i) {
    const auto p = layer_prefix("dec", i);
    auto s = attend(params, cfg, AttentionBlock::decoder_self, p + ".self", y, y, masks.tgt, ctx);
    y = residual_norm(params, cfg, p + ".ln1", y, s, ctx);
    auto c = attend(params, cfg, AttentionBlock::decoder_cross, p + ".cross", y, memory, masks.cross, ctx);
    y = residual_norm(params, cfg, p + ".ln2", y, c, ctx);
    y = residual_norm(params, cfg, p + ".ln3", y, feed_forward(params, cfg, p + ".ff", y), ctx);
  }
  return linear(y, params.at("out.w"), params.at("out.b"));
}

Tensor model_forward(const ParamStore& params, const ModelConfig& cfg, const TokenBatch& batch,
                     const RunContext& ctx) {
  batch.validate(cfg.vocab_size);
  const auto masks = build_masks(batch);
  auto memory = encode(params, cfg, batch, masks, ctx);
  return decode_logits(params, cfg, memory, batch, masks, ctx);
}

std::vector<int> greedy_search(const StepFn& step, std::size_t max_steps) {
  std::vector<int> prefix{kBosId};
  for (std::size_t t = 0; t < max_steps; ++t) {
    const auto lp = step({prefix});
    const int next = argmax(lp.front());
    prefix.push_back(next);
    if (next == kEosId) break;
  }
  return {prefix.begin() + 1, prefix.end()};
}

std::vector<int> beam_search(const StepFn& step, std::size_t beam_size, std::size_t max_steps) {
  if (beam_size < 1) throw ContractError("beam_size must be >= 1");
  struct Hyp {
    std::vector<int> tokens;
    double logp = 0.0;
  };
  struct Candidate {
    double score;
    std::size_t hyp;
    int token;
  };
  std::vector<Hyp> alive{{{kBosId}, 0.0}};
  std::vector<std::pair<double, std::vector<int>>> finished;
  auto normalized = [](const Hyp& h) { return h.logp / static_cast<double>(h.tokens.size() - 1); };

  for (std::size_t t = 0; t < max_steps && !alive.empty(); ++t) {
    std::vector<std::vector<int>> prefixes;
    prefixes.reserve(alive.size());
    for (const auto& h : alive) prefixes.push_back(h.tokens);
    const auto lp = step(prefixes);
    std::vector<Candidate> cands;
    for (std::size_t h = 0; h < alive.size(); ++h) {
      for (std::size_t v = 0; v < lp[h].size(); ++v) {
        cands.push_back({alive[h].logp + lp[h][v], h, static_cast<int>(v)});
      }
    }
    // Ties resolve to the earlier hypothesis, then the lower token id.
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Candidate& a, const Candidate& b) { return a.score > b.score; });
    std::vector<Hyp> next;
    for (std::size_t c = 0; c < std::min(beam_size, cands.size()); ++c) {
      Hyp h = alive[cands[c].hyp];
      h.tokens.push_back(cands[c].token);
      h.logp = cands[c].score;
      if (cands[c].token == kEosId) {
        finished.emplace_back(normalized(h), h.tokens);
      } else {
        next.push_back(std::move(h));
      }
    }
    alive = std::move(next);
  }
  for (const auto& h : alive) finished.emplace_back(normalized(h), h.tokens);
  const auto best = std::max_element(finished.begin(), finished.end(), [](const auto& a, const auto& b) {
    return a.first < b.first;
  });
  return {best->second.begin() + 1, best->second.end()};
}

std::vector<int> decode(const ParamStore& params, const ModelConfig& cfg, const std::vector<int>& source,
                        std::size_t beam_size, std::size_t max_steps) {
  if (beam_size < 1) throw ContractError("beam_size must be >= 1");
  if (source.empty()) throw ContractError("cannot decode an empty source");
  NoGradGuard no_grad;
  const RunContext ctx{Mode::eval, 0, 0};
  TokenBatch src;
  src.batch = 1;
  src.src_len = source.size();
  src.src = source;
  src.src_lengths = {source.size()};
  src.tgt_len = 1;
  src.tgt = {kBosId};
  src.tgt_lengths = {1};
  src.validate(cfg.vocab_size);
  const auto memory = encode(params, cfg, src, build_masks(src), ctx);

  StepFn step = [&](const std::vector<std::vector<int>>& prefixes) {
    TokenBatch b;
    b.batch = prefixes.size();
    b.src_len = src.src_len;
    b.tgt_len = prefixes.front().size();
    for (std::size_t i = 0; i < b.batch; ++i) {
      b.src.insert(b.src.end(), source.begin(), source.end());
      b.src_lengths.push_back(source.size());
      b.tgt.insert(b.tgt.end(), prefixes[i].begin(), prefixes[i].end());
      b.tgt_lengths.push_back(b.tgt_len);
    }
    const auto logits = decode_logits(params, cfg, tile_batch(memory, b.batch), b, build_masks(b), ctx);
    std::vector<std::vector<double>> out;
    for (std::size_t i = 0; i < b.batch; ++i) out.push_back(last_log_probs(logits, i));
    return out;
  };
  return beam_size == 1 ? greedy_search(step, max_steps) : beam_search(step, beam_size, max_steps);
}

std::vector<std::vector<int>> greedy_decode_batch(const ParamStore& params, const ModelConfig& cfg,
                                                  const TokenBatch& batch, std::size_t max_steps) {
  NoGradGuard no_grad;
  const RunContext ctx{Mode::eval, 0, 0};
  std::vector<std::vector<int>> prefixes(batch.batch, std::vector<int>{kBosId});
  TokenBatch first = prefix_batch(batch, prefixes);
  const auto memory = encode(params, cfg, first, build_masks(first), ctx);
  std::vector<bool> done(batch.batch, false);
  for (std::size_t t = 0; t < max_steps; ++t) {
    const auto b = prefix_batch(batch, prefixes);
    const auto logits = decode_logits(params, cfg, memory, b, build_masks(b), ctx);
    bool all_done = true;
    for (std::size_t i = 0; i < batch.batch; ++i) {
      const int next = argmax(last_log_probs(logits, i));
      prefixes[i].push_back(next);
      if (next == kEosId) done[i] = true;
      all_done = all_done && done[i];
    }
    if (all_done) break;
  }
  std::vector<std::vector<int>> out;
  for (auto& p : prefixes) {
    auto eos = std::find(p.begin() + 1, p.end(), kEosId);
    out.emplace_back(p.begin() + 1, eos == p.end() ? p.end() : eos + 1);
  }
  return out;
}

}  // namespace zodiac
