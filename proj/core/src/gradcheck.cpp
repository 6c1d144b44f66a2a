#include "zodiac/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "zodiac/errors.hpp"
#include "zodiac/ops.hpp"
#include "zodiac/random.hpp"
#include "zodiac/train.hpp"

namespace zodiac {

double GradcheckReport::max_error(std::string_view op) const {
  double m = 0.0;
  for (const auto& b : blocks) {
    if (op.empty() || b.op == op) m = std::max(m, b.rel_error);
  }
  return m;
}

const BlockError* GradcheckReport::find(std::string_view op, std::string_view block) const {
  for (const auto& b : blocks) {
    if (b.op == op && b.block == block) return &b;
  }
  return nullptr;
}

std::vector<std::string> GradcheckReport::ops() const {
  std::vector<std::string> out;
  for (const auto& b : blocks) {
    if (std::find(out.begin(), out.end(), b.op) == out.end()) out.push_back(b.op);
  }
  return out;
}

std::vector<BlockError> gradcheck_function(const std::string& op,
                                           const std::vector<std::pair<std::string, Tensor>>& inputs,
                                           const std::function<Tensor()>& f, const GradcheckOptions& options) {
  auto eval = [&] {
    NoGradGuard ng;
    const auto y = f();
    if (y.numel() != 1) throw ContractError("gradcheck: function must return a scalar");
    return y.item();
  };
  const double y0 = eval();
  const double y1 = eval();
  if (std::memcmp(&y0, &y1, sizeof y0) != 0) throw ContractError("gradcheck: nondeterministic forward in " + op);

  std::vector<Tensor> leaves;
  for (const auto& [name, t] : inputs) {
    auto leaf = t;
    leaf.set_requires_grad(true);
    leaf.zero_grad();
    leaves.push_back(leaf);
  }
  f().backward();

  std::vector<BlockError> out;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto t = leaves[k];
    BlockError be;
    be.op = op;
    be.block = inputs[k].first;
    be.size = t.numel();
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    if (options.corrupt_block && *options.corrupt_block == op + "/" + be.block) {
      for (auto& a : analytic) a *= options.corrupt_factor;
    }
    auto w = t.mutable_data();
    double max_diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double saved = w[i];
      w[i] = saved + options.h;
      const double up = eval();
      w[i] = saved - options.h;
      const double down = eval();
      w[i] = saved;
      const double numeric = (up - down) / (2.0 * options.h);
      max_diff = std::max(max_diff, std::abs(analytic[i] - numeric));
      scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric)});
    }
    be.abs_error = max_diff;
    be.rel_error = scale < 1e-10 ? max_diff : max_diff / scale;
    out.push_back(be);
  }
  for (auto& t : leaves) t.zero_grad();
  return out;
}

ModelConfig gradcheck_model_config(AttentionKind kind) {
  ModelConfig cfg;
  cfg.vocab_size = 10;
  cfg.d_model = 8;
  cfg.heads = 2;
  cfg.n_encoder_layers = 2;
  cfg.n_decoder_layers = 2;
  cfg.d_ff = 16;
  cfg.max_len = 16;
  cfg.attention_kind = kind;
  cfg.sync_attention();
  return cfg;
}

GradcheckReport gradcheck(const ModelConfig& base, std::uint64_t seed, const GradcheckOptions& options) {
  ModelConfig cfg = base;
  cfg.attention.system_dropout = 0.0;
  cfg.attention.zodiac_dropout = 0.0;
  cfg.validate();
  const auto& acfg = cfg.attention;
  const RunContext ctx{Mode::eval, seed, 0};
  Rng rng(seed);
  GradcheckReport report;
  auto append = [&](std::vector<BlockError> b) { report.blocks.insert(report.blocks.end(), b.begin(), b.end()); };

  if (options.check_ops) {
    {
      std::vector<double> xs;
      for (int i = 0; i < 41; ++i) xs.push_back(-4.0 + 0.2 * i + 0.013);
      const auto x = Tensor::from_data({xs.size()}, xs, true);
      const auto w = rng.uniform_tensor({xs.size()}, -1.0, 1.0);
      append(gradcheck_function("gelu_exact", {{"x", x}}, [&] { return sum(mul(gelu_exact(x), w)); }, options));
      append(gradcheck_function("gelu_approx", {{"x", x}}, [&] { return sum(mul(gelu_approx(x), w)); }, options));
    }

    const std::size_t B = 2, H = 2, L = 3, d = 4;
    const auto q1 = rng.normal_tensor({B, H, L, d}, 1.0, true);
    const auto q2 = rng.normal_tensor({B, H, L, d}, 1.0, true);
    const auto k = rng.normal_tensor({B, H, L, d}, 1.0, true);
    const auto v = rng.normal_tensor({B, H, L, d}, 1.0, true);
    const auto causal = MaskSet::causal(L);
    const auto padded = MaskSet::padding({3, 2}, L);

    const auto w_rca = rng.uniform_tensor({B, H, L, d}, -1.0, 1.0);
    append(gradcheck_function("rca", {{"q1", q1}, {"k", k}, {"v", v}},
                              [&] { return sum(mul(rca(q1, k, v, causal, acfg, ctx), w_rca)); }, options));

    const auto w_piv_head = rng.uniform_tensor({B, H, 1, 1}, -1.0, 1.0);
    const auto w_piv_prefix = rng.uniform_tensor({B, H, L, 1}, -1.0, 1.0);
    append(gradcheck_function("piv", {{"q2", q2}, {"v", v}}, [&] {
      return add(sum(mul(piv(q2, v, padded, acfg, PivPooling::per_head), w_piv_head)),
                 sum(mul(piv(q2, v, causal, acfg, PivPooling::query_prefix), w_piv_prefix)));
    }, options));

    const auto w_head = rng.uniform_tensor({B, H, L, d}, -1.0, 1.0);
    append(gradcheck_function("zodiac_head", {{"q1", q1}, {"q2", q2}, {"k", k}, {"v", v}}, [&] {
      return sum(mul(zodiac_head(q1, q2, k, v, causal, acfg, ctx, "zodiac", PivPooling::query_prefix), w_head));
    }, options));

    const auto x = rng.normal_tensor({B, L, acfg.d_model}, 1.0, true);
    const auto mem = rng.normal_tensor({B, L + 1, acfg.d_model}, 1.0, true);
    const auto p = make_attention_params(acfg, true, rng);
    const auto cross = MaskSet::cross({4, 3}, L + 1, L);
    const auto w_out = rng.uniform_tensor({B, L, acfg.d_model}, -1.0, 1.0);
    std::vector<std::pair<std::string, Tensor>> zin{{"query", x}, {"memory", mem}};
    for (auto [name, t] : {std::pair{"wq1", p.wq1}, {"bq1", p.bq1}, {"wq2", p.wq2}, {"bq2", p.bq2}, {"wk", p.wk},
                           {"bk", p.bk}, {"wv", p.wv}, {"bv", p.bv}, {"wo", p.wo}, {"bo", p.bo}}) {
      if (t.defined()) zin.emplace_back(name, t);
    }
    append(gradcheck_function("zmha", zin, [&] {
      return add(sum(mul(zmha(x, x, x, causal, p, acfg, ctx, "self", PivPooling::query_prefix), w_out)),
                 sum(mul(zmha(x, mem, mem, cross, p, acfg, ctx, "cross", PivPooling::per_head), w_out)));
    }, options));
  }

  if (options.check_model) {
    auto params = init_params(cfg);
    const std::vector<Example> examples{{{3, 4, 5, 6}, {3, 4, 5, 6}}, {{7, 8, 9}, {9, 8, 7}}};
    const auto batch = make_batch(examples);
    std::vector<std::pair<std::string, Tensor>> in(params.begin(), params.end());
    append(gradcheck_function("model", in, [&] {
      return cross_entropy(model_forward(params, cfg, batch, ctx), batch.labels);
    }, options));
  }
  return report;
}

}  // namespace zodiac
