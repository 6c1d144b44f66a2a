#include <benchmark/benchmark.h>

#include "zodiac/attention.hpp"
#include "zodiac/model.hpp"
#include "zodiac/ops.hpp"
#include "zodiac/presets.hpp"
#include "zodiac/random.hpp"
#include "zodiac/train.hpp"

using namespace zodiac;

static void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng r(1);
  const auto a = r.normal_tensor({n, n}, 1.0), b = r.normal_tensor({n, n}, 1.0);
  NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

// Self-attention over [32, 11, 64]: the toy model's shape.
static void BM_Attention(benchmark::State& state) {
  const bool zodiac = state.range(0) != 0;
  const bool backward = state.range(1) != 0;
  auto cfg = AttentionConfig::sized(64, 4);
  cfg.zodiac_dropout = 0.0;
  Rng r(2);
  const auto p = make_attention_params(cfg, true, r);
  const auto x = r.normal_tensor({32, 11, 64}, 1.0, true);
  const auto mask = MaskSet::causal(11);
  const RunContext ctx{Mode::eval, 0, 0};
  for (auto _ : state) {
    auto y = zodiac ? zmha(x, x, x, mask, p, cfg, ctx, "self", PivPooling::query_prefix)
                    : mha_baseline(x, x, x, mask, p, cfg);
    if (backward) sum(y).backward();
    benchmark::DoNotOptimize(y.data().data());
  }
}
BENCHMARK(BM_Attention)->ArgsProduct({{0, 1}, {0, 1}})->ArgNames({"zodiac", "backward"})->Unit(benchmark::kMillisecond);

static void BM_TrainStep(benchmark::State& state) {
  auto rc = *find_preset(state.range(0) ? "zodiac-tanh" : "baseline");
  auto params = init_params(rc.model);
  const auto data = gen_task(rc.task);
  const std::vector<Example> slice(data.train.begin(), data.train.begin() + rc.train.batch_size);
  const auto batch = make_batch(slice);
  AdamState adam;
  std::uint64_t step = 0;
  for (auto _ : state) {
    params.zero_grad();
    const RunContext ctx{Mode::train, rc.train.seed, ++step};
    auto loss = cross_entropy(model_forward(params, rc.model, batch, ctx), batch.labels);
    loss.backward();
    adam_step(params, adam, rc.train.adam, rc.train.base_lr);
  }
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->ArgName("zodiac")->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
