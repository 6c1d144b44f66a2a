#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "zodiac/attention.hpp"
#include "zodiac/errors.hpp"
#include "zodiac/ops.hpp"

using namespace zodiac;

namespace {

AttentionConfig small_cfg() {
  auto c = AttentionConfig::sized(8, 2);
  c.zodiac_dropout = 0.0;
  c.system_dropout = 0.0;
  return c;
}

const RunContext kEval{Mode::eval, 0, 0};

// Independent scalar-loop oracle for one [L, d] slice.
std::vector<double> oracle_rca_map(const double* q, const double* k, std::size_t L, std::size_t d,
                                   const std::vector<std::vector<bool>>& keep) {
  std::vector<double> s(L * L);
  for (std::size_t i = 0; i < L; ++i) {
    for (std::size_t j = 0; j < L; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < d; ++p) acc += gelu_exact(q[i * d + p]) * gelu_exact(k[j * d + p]);
      s[i * L + j] = keep[i][j] ? gelu_exact(acc / std::sqrt(double(d))) : -INFINITY;
    }
    double mx = -INFINITY, z = 0.0;
    for (std::size_t j = 0; j < L; ++j) mx = std::max(mx, s[i * L + j]);
    for (std::size_t j = 0; j < L; ++j) z += std::exp(s[i * L + j] - mx);
    for (std::size_t j = 0; j < L; ++j) s[i * L + j] = std::exp(s[i * L + j] - mx) / z;
  }
  return s;
}

double oracle_rap(const double* q2, const double* v, std::size_t L, std::size_t d,
                  const std::vector<std::vector<bool>>& keep) {
  double total = 0.0;
  int count = 0;
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = 0; j < L; ++j) {
      if (!keep[i][j]) continue;
      double acc = 0.0;
      for (std::size_t p = 0; p < d; ++p) acc += gelu_exact(q2[i * d + p]) * gelu_exact(v[j * d + p]);
      total += gelu_exact(acc / std::sqrt(double(d)));
      ++count;
    }
  return total / count;
}

std::vector<std::vector<bool>> causal_keep(std::size_t L) {
  std::vector<std::vector<bool>> k(L, std::vector<bool>(L));
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = 0; j < L; ++j) k[i][j] = j <= i;
  return k;
}

}  // namespace

TEST_CASE("rca_map against the scalar oracle") {
  auto cfg = small_cfg();
  Rng r(1);
  const std::size_t L = 5, d = 4;
  auto q = r.normal_tensor({1, 1, L, d}, 1.0);
  auto k = r.normal_tensor({1, 1, L, d}, 1.0);
  auto map = rca_map(q, k, MaskSet::causal(L), cfg);
  auto ref = oracle_rca_map(q.data().data(), k.data().data(), L, d, causal_keep(L));
  for (std::size_t i = 0; i < L * L; ++i) CHECK(map.data()[i] == doctest::Approx(ref[i]).epsilon(1e-13));
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = i + 1; j < L; ++j) CHECK(map.at({0, 0, i, j}) == 0.0);
}

TEST_CASE("piv map and RAP against the scalar oracle") {
  auto cfg = small_cfg();
  cfg.gate = std::nullopt;
  cfg.zoneout = 0.0;
  Rng r(2);
  const std::size_t L = 4, d = 4;
  auto q2 = r.normal_tensor({1, 1, L, d}, 1.0);
  auto v = r.normal_tensor({1, 1, L, d}, 1.0);
  const auto ref = oracle_rap(q2.data().data(), v.data().data(), L, d, causal_keep(L));
  CHECK(rap(piv_map(q2, v, cfg), MaskSet::causal(L)).item() == doctest::Approx(ref).epsilon(1e-13));
  // zeta 0 and no gate: PIV is RAP itself.
  CHECK(piv(q2, v, MaskSet::causal(L), cfg).item() == doctest::Approx(ref).epsilon(1e-13));
  cfg.zoneout = 1.0;
  cfg.gate = GateKind::sigmoid;
  CHECK(piv(q2, v, MaskSet::causal(L), cfg).item() == doctest::Approx(1.0 + 1.0 / (1.0 + std::exp(-ref))).epsilon(1e-13));
}

TEST_CASE("RAP denominators of causal masks are triangular numbers") {
  for (std::size_t L = 1; L <= 16; ++L) {
    const auto den = masked_mean_denominators({1, 1, L, L}, MaskSet::causal(L));
    REQUIRE(den.size() == 1);
    CHECK(den[0] == double(L * (L + 1) / 2));
  }
}

TEST_CASE("prefix pooling ends at the whole-map value") {
  auto cfg = small_cfg();
  Rng r(3);
  auto q2 = r.normal_tensor({2, 2, 5, 4}, 1.0);
  auto v = r.normal_tensor({2, 2, 5, 4}, 1.0);
  const auto mask = MaskSet::combined({5, 3}, 5);
  auto head = piv(q2, v, mask, cfg, PivPooling::per_head);
  auto prefix = piv(q2, v, mask, cfg, PivPooling::query_prefix);
  CHECK(head.shape() == Shape{2, 2, 1, 1});
  CHECK(prefix.shape() == Shape{2, 2, 5, 1});
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t h = 0; h < 2; ++h) CHECK(prefix.at({b, h, 4, 0}) == head.at({b, h, 0, 0}));
}

TEST_CASE("PIV lies in the gate's range") {
  auto cfg = small_cfg();
  Rng r(4);
  for (int t = 0; t < 200; ++t) {
    auto q2 = r.normal_tensor({1, 2, 3, 4}, 1.0);
    auto v = r.normal_tensor({1, 2, 3, 4}, 1.0);
    cfg.gate = GateKind::sigmoid;
    const auto s = piv(q2, v, MaskSet::causal(3), cfg);
    for (double p : s.data()) CHECK((p > 1.0 && p < 2.0));
    cfg.gate = GateKind::tanh;
    const auto t2 = piv(q2, v, MaskSet::causal(3), cfg);
    for (double p : t2.data()) CHECK((p > 0.0 && p < 2.0));
  }
}

TEST_CASE("zodiac_head is RCA scaled by PIV") {
  auto cfg = small_cfg();
  Rng r(5);
  auto q1 = r.normal_tensor({1, 2, 3, 4}, 1.0), q2 = r.normal_tensor({1, 2, 3, 4}, 1.0);
  auto k = r.normal_tensor({1, 2, 3, 4}, 1.0), v = r.normal_tensor({1, 2, 3, 4}, 1.0);
  const auto m = MaskSet::causal(3);
  auto head = zodiac_head(q1, q2, k, v, m, cfg, kEval);
  auto cur = rca(q1, k, v, m, cfg, kEval);
  auto p = piv(q2, v, m, cfg);
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t e = 0; e < 4; ++e)
        CHECK(head.at({0, h, i, e}) == cur.at({0, h, i, e}) * p.at({0, h, 0, 0}));
  cfg.piv_enabled = false;
  CHECK(testutil::bitwise_equal(zodiac_head(q1, q2, k, v, m, cfg, kEval).data(), cur.data()));
}

TEST_CASE("RCA dropout is active only in train mode") {
  auto cfg = small_cfg();
  cfg.zodiac_dropout = 0.5;
  Rng r(6);
  auto q = r.normal_tensor({1, 1, 4, 4}, 1.0), k = r.normal_tensor({1, 1, 4, 4}, 1.0), v = r.normal_tensor({1, 1, 4, 4}, 1.0);
  auto eval = rca(q, k, v, MaskSet::none(), cfg, kEval);
  auto train = rca(q, k, v, MaskSet::none(), cfg, RunContext{Mode::train, 1, 0});
  int zeros = 0;
  for (std::size_t i = 0; i < 16; ++i) {
    if (train.data()[i] == 0.0) {
      ++zeros;
    } else {
      CHECK(train.data()[i] == doctest::Approx(2.0 * eval.data()[i]).epsilon(1e-15));
    }
  }
  CHECK(zeros > 0);
}

TEST_CASE("ZMHA with every addition off equals baseline MHA bitwise") {
  Rng r(7);
  for (int t = 0; t < 10; ++t) {
    auto cfg = small_cfg();
    cfg.gelu = GeluSites::all(false);
    cfg.piv_enabled = false;
    CHECK(cfg.is_ablated());
    auto p = make_attention_params(cfg, true, r);
    auto x = r.normal_tensor({2, 5, 8}, 1.0);
    auto mem = r.normal_tensor({2, 4, 8}, 1.0);
    const auto m = MaskSet::combined({5, 3}, 5);
    CHECK(testutil::bitwise_equal(zmha(x, x, x, m, p, cfg, kEval).data(), mha_baseline(x, x, x, m, p, cfg).data()));
    const auto cm = MaskSet::cross({4, 2}, 4, 5);
    CHECK(testutil::bitwise_equal(zmha(x, mem, mem, cm, p, cfg, kEval).data(),
                                  mha_baseline(x, mem, mem, cm, p, cfg).data()));
  }
}

TEST_CASE("zmha needs the past-query projection when PIV is on") {
  auto cfg = small_cfg();
  Rng r(8);
  auto p = make_attention_params(cfg, false, r);
  auto x = r.normal_tensor({1, 3, 8}, 1.0);
  CHECK_THROWS_AS(zmha(x, x, x, MaskSet::none(), p, cfg, kEval), ContractError);
  CHECK(zmha(x, x, x, MaskSet::none(), make_attention_params(cfg, true, r), cfg, kEval).shape() == Shape{1, 3, 8});
}

TEST_CASE("split and merge heads are inverse") {
  Rng r(9);
  auto x = r.normal_tensor({2, 3, 8}, 1.0);
  auto s = split_heads(x, 2);
  CHECK(s.shape() == Shape{2, 2, 3, 4});
  CHECK(s.at({1, 1, 2, 3}) == x.at({1, 2, 7}));
  CHECK(testutil::bitwise_equal(merge_heads(s).data(), x.data()));
}

TEST_CASE("extra parameter arithmetic") {
  auto cfg = AttentionConfig::sized(512, 8);
  CHECK(extra_param_count(cfg) == 262656);
  const auto e = extra_param_count(cfg, 6, 6);
  CHECK(e.instances == 18);
  CHECK(e.total == 4727808);
  cfg.use_bias = false;
  CHECK(extra_param_count(cfg) == 512 * 512);
}

TEST_CASE("attention config validation names the field") {
  auto cfg = AttentionConfig::sized(8, 2);
  cfg.d_k = 3;
  try {
    cfg.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "d_k");
  }
  cfg = AttentionConfig::sized(8, 2);
  cfg.zodiac_dropout = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("degenerate masks are rejected") {
  auto cfg = small_cfg();
  Rng r(10);
  auto q = r.normal_tensor({1, 1, 2, 4}, 1.0);
  const MaskSet none_kept({1, 1, 1, 2}, {0, 0}, MaskKind::padding);
  CHECK_THROWS_AS(rca_map(q, q, none_kept, cfg), DegenerateMaskError);
}
