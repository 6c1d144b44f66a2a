#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>

#include "test_util.hpp"
#include "zodiac/checkpoint.hpp"
#include "zodiac/errors.hpp"
#include "zodiac/gradcheck.hpp"
#include "zodiac/model.hpp"
#include "zodiac/task.hpp"
#include "zodiac/train.hpp"

using namespace zodiac;

namespace {

ModelConfig tiny(AttentionKind kind = AttentionKind::zodiac) {
  auto c = gradcheck_model_config(kind);
  c.seed = 5;
  return c;
}

TokenBatch sample_batch() {
  const std::vector<Example> ex{{{3, 4, 5, 6}, {3, 4, 5, 6}}, {{7, 8}, {8, 7}}, {{9, 3, 4}, {4, 3, 9}}};
  return make_batch(ex);
}

const RunContext kEval{Mode::eval, 0, 0};

}  // namespace

TEST_CASE("positional encoding") {
  auto pe = positional_encoding(8, 6);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(pe.at({0, 2 * i}) == 0.0);
    CHECK(pe.at({0, 2 * i + 1}) == 1.0);
  }
  CHECK(pe.at({1, 0}) == doctest::Approx(0.841471).epsilon(1e-6));
  for (double v : pe.data()) CHECK((v >= -1.0 && v <= 1.0));
  CHECK_THROWS_AS(positional_encoding(4, 5), ContractError);
}

TEST_CASE("mask construction") {
  const auto c = MaskSet::causal(3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(c.at({i, j}) == (j <= i));
  const auto p = MaskSet::padding({2}, 3);
  CHECK(p.at({0, 0, 0, 0}));
  CHECK(p.at({0, 0, 0, 1}));
  CHECK_FALSE(p.at({0, 0, 0, 2}));
  const auto comb = MaskSet::combined({1}, 3);
  CHECK(comb.at({0, 0, 1, 0}));
  CHECK_FALSE(comb.at({0, 0, 1, 1}));
  CHECK_FALSE(comb.at({0, 0, 1, 2}));
}

TEST_CASE("build_masks rejects empty sequences") {
  auto b = sample_batch();
  b.src_lengths[0] = 0;
  CHECK_THROWS_AS(b.validate(16), ContractError);
  auto c = sample_batch();
  c.src[0] = 99;
  CHECK_THROWS_AS(c.validate(16), ContractError);
}

TEST_CASE("forward shape and determinism") {
  const auto cfg = tiny();
  const auto params = init_params(cfg);
  const auto b = sample_batch();
  auto l1 = model_forward(params, cfg, b, kEval);
  CHECK(l1.shape() == Shape{3, b.tgt_len, cfg.vocab_size});
  auto l2 = model_forward(params, cfg, b, kEval);
  CHECK(testutil::bitwise_equal(l1.data(), l2.data()));
  // Eval mode ignores dropout seeds.
  auto l3 = model_forward(params, cfg, b, RunContext{Mode::eval, 1234, 99});
  CHECK(testutil::bitwise_equal(l1.data(), l3.data()));
  auto dcfg = cfg;
  dcfg.attention.system_dropout = 0.3;
  auto t1 = model_forward(params, dcfg, b, RunContext{Mode::train, 1, 0});
  auto t2 = model_forward(params, dcfg, b, RunContext{Mode::train, 1, 0});
  auto t3 = model_forward(params, dcfg, b, RunContext{Mode::train, 1, 1});
  CHECK(testutil::bitwise_equal(t1.data(), t2.data()));
  CHECK_FALSE(testutil::bitwise_equal(t1.data(), t3.data()));
}

TEST_CASE("initialization is reproducible from the seed") {
  const auto cfg = tiny();
  auto a = init_params(cfg), b = init_params(cfg);
  for (const auto& [name, t] : a) CHECK(testutil::bitwise_equal(t.data(), b.at(name).data()));
  auto other = cfg;
  other.seed = 6;
  CHECK_FALSE(testutil::bitwise_equal(init_params(other).at("enc.0.self.wq1").data(), a.at("enc.0.self.wq1").data()));
  // Xavier bound for a [8, 8] map.
  for (double w : a.at("enc.0.self.wq1").data()) CHECK(std::abs(w) <= std::sqrt(6.0 / 16.0));
}

TEST_CASE("parameter count identity") {
  for (std::size_t d : {8u, 64u}) {
    auto cfg = tiny();
    cfg.d_model = d;
    cfg.heads = 2;
    cfg.sync_attention();
    auto base = cfg;
    base.attention_kind = AttentionKind::baseline;
    const auto e = extra_param_count(cfg.attention, cfg.n_encoder_layers, cfg.n_decoder_layers);
    CHECK(param_count(cfg) - param_count(base) == e.total);
    CHECK(init_params(cfg).count() == param_count(cfg));
  }
}

TEST_CASE("per-block attention overrides") {
  auto cfg = tiny();
  cfg.decoder_cross_kind = AttentionKind::baseline;
  const auto params = init_params(cfg);
  CHECK(params.contains("dec.0.self.wq2"));
  CHECK_FALSE(params.contains("dec.0.cross.wq2"));
  CHECK(model_forward(params, cfg, sample_batch(), kEval).dim(-1) == cfg.vocab_size);
}

TEST_CASE("causal integrity of decoder logits") {
  for (auto kind : {AttentionKind::zodiac, AttentionKind::baseline}) {
    const auto cfg = tiny(kind);
    const auto params = init_params(cfg);
    auto b = sample_batch();
    const auto base = model_forward(params, cfg, b, kEval);
    const std::size_t V = cfg.vocab_size, L = b.tgt_len;
    for (std::size_t j = 1; j < b.tgt_lengths[0]; ++j) {
      auto p = b;
      p.tgt[j] = p.tgt[j] == 5 ? 6 : 5;
      const auto out = model_forward(params, cfg, p, kEval);
      for (std::size_t pos = 0; pos < j; ++pos)
        for (std::size_t v = 0; v < V; ++v) CHECK(out.data()[pos * V + v] == base.data()[pos * V + v]);
      bool changed = false;
      for (std::size_t pos = j; pos < L; ++pos)
        for (std::size_t v = 0; v < V; ++v) changed = changed || out.data()[pos * V + v] != base.data()[pos * V + v];
      CHECK(changed);
    }
  }
}

TEST_CASE("full tiny model gradients") {
  for (auto kind : {AttentionKind::zodiac, AttentionKind::baseline}) {
    GradcheckOptions o;
    o.check_ops = false;
    const auto r = gradcheck(tiny(kind), 3, o);
    CHECK(r.max_error("model") < 1e-4);
  }
}

TEST_CASE("beam search finds the better joint sequence") {
  // Step 1: token 3 (0.6) or 4 (0.4). After 3 the best continuation has 0.4,
  // after 4 it has 0.9; every sequence then ends with eos.
  const std::size_t V = 8;
  auto dist = [&](const std::vector<int>& prefix) {
    std::vector<double> p(V, 1e-12);
    if (prefix.size() == 1) {
      p[3] = 0.6;
      p[4] = 0.4;
    } else if (prefix.size() == 2 && prefix[1] == 3) {
      p[5] = 0.4;
      p[6] = 0.35;
      p[7] = 0.25;
    } else if (prefix.size() == 2) {
      p[5] = 0.05;
      p[6] = 0.9;
      p[7] = 0.05;
    } else {
      p[kEosId] = 1.0;
    }
    for (auto& x : p) x = std::log(x);
    return p;
  };
  StepFn step = [&](const std::vector<std::vector<int>>& prefixes) {
    std::vector<std::vector<double>> out;
    for (const auto& pr : prefixes) out.push_back(dist(pr));
    return out;
  };
  // Enumerate every two-token sequence for the oracle.
  double best = -INFINITY;
  std::vector<int> best_seq;
  for (int a = 0; a < int(V); ++a)
    for (int c = 0; c < int(V); ++c) {
      const double s = dist({kBosId})[a] + dist({kBosId, a})[c];
      if (s > best) {
        best = s;
        best_seq = {a, c, kEosId};
      }
    }
  const auto greedy = greedy_search(step, 5);
  CHECK(greedy == std::vector<int>{3, 5, kEosId});
  CHECK(beam_search(step, 1, 5) == greedy);
  CHECK(beam_search(step, 2, 5) == best_seq);
  CHECK(best_seq == std::vector<int>{4, 6, kEosId});
  CHECK_THROWS_AS(beam_search(step, 0, 5), ContractError);
}

TEST_CASE("decode: beam 1 is greedy, batched greedy matches per-sequence") {
  const auto cfg = tiny();
  const auto params = init_params(cfg);
  const auto b = sample_batch();
  const auto batched = greedy_decode_batch(params, cfg, b, 6);
  for (std::size_t r = 0; r < b.batch; ++r) {
    std::vector<int> src(b.src.begin() + r * b.src_len, b.src.begin() + r * b.src_len + b.src_lengths[r]);
    const auto g = decode(params, cfg, src, 1, 6);
    CHECK(g == batched[r]);
    CHECK(g.size() <= 6);
    CHECK(decode(params, cfg, src, 3, 6).size() <= 6);
  }
  CHECK_THROWS_AS(decode(params, cfg, {3, 4}, 0, 4), ContractError);
}

TEST_CASE("checkpoint round trip is bit-exact") {
  auto cfg = tiny();
  cfg.attention.gate = GateKind::tanh;
  cfg.attention.zoneout = 0.1 + 0.2;  // not exactly representable in short decimal
  const auto params = init_params(cfg);
  TrainState st;
  st.step = 17;
  st.next_epoch = 2;
  st.adam.step = 17;
  for (const auto& [n, t] : params) {
    st.adam.m.emplace_back(t.numel(), 1.0 / 3.0);
    st.adam.v.emplace_back(t.numel(), 2.0 / 7.0);
  }
  EpochRecord rec;
  rec.epoch = 1;
  rec.steps = 17;
  rec.lr = 5e-4 * 0.8;
  rec.train_loss = std::nextafter(1.0, 2.0);
  st.log.push_back(rec);
  const auto path = (std::filesystem::temp_directory_path() / "zodiac_test_roundtrip.zdck").string();
  save_checkpoint(path, Checkpoint{cfg, params, TrainConfig{}, TaskSpec{}, st});
  const auto ck = load_checkpoint(path);
  CHECK(ck.model == cfg);
  CHECK(ck.params.size() == params.size());
  for (const auto& [name, t] : params) {
    CHECK(ck.params.at(name).shape() == t.shape());
    CHECK(testutil::bitwise_equal(ck.params.at(name).data(), t.data()));
  }
  REQUIRE(ck.state.has_value());
  CHECK(ck.state->step == 17);
  CHECK(ck.state->adam.m[3][0] == 1.0 / 3.0);
  CHECK(ck.state->log[0].train_loss == rec.train_loss);
  CHECK(*ck.train_config == TrainConfig{});

  // Truncation is detected.
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 3);
  CHECK_THROWS_AS(load_checkpoint(path), ContractError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_checkpoint(path), ContractError);
}
