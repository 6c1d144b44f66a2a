#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "zodiac/errors.hpp"
#include "zodiac/ops.hpp"

using namespace zodiac;
using testutil::fd_rel_error;

namespace {

Tensor rand_t(Shape s, std::uint64_t seed, bool grad = true) {
  Rng r(seed);
  return r.normal_tensor(std::move(s), 1.0, grad);
}

// Naive triple loop, written independently of the kernels under test.
std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b, std::size_t m,
                                 std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

}  // namespace

TEST_CASE("factories and accessors") {
  auto t = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.dim(-1) == 3);
  CHECK(t.at({1, 2}) == 6.0);
  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), ShapeError);
  CHECK(Tensor::scalar(2.5).item() == 2.5);
  CHECK_THROWS_AS(t.item(), ContractError);
}

TEST_CASE("backward requires a scalar root") {
  auto x = rand_t({3}, 1);
  CHECK_THROWS_AS(mul_scalar(x, 2.0).backward(), ContractError);
}

TEST_CASE("gradients accumulate on leaves across backward calls") {
  auto x = Tensor::from_data({2}, {1.0, 2.0}, true);
  sum(mul(x, x)).backward();
  sum(mul(x, x)).backward();
  CHECK(x.grad()[0] == 4.0);
  CHECK(x.grad()[1] == 8.0);
  x.zero_grad();
  CHECK_FALSE(x.has_grad());
}

TEST_CASE("shared subexpressions receive gradient from every use") {
  auto x = Tensor::from_data({1}, {3.0}, true);
  auto y = mul(x, x);
  sum(add(y, y)).backward();  // d/dx 2x^2 = 4x
  CHECK(x.grad()[0] == 12.0);
}

TEST_CASE("tape order puts every node after its inputs") {
  auto a = rand_t({2, 2}, 1);
  auto b = rand_t({2, 2}, 2);
  auto c = add(matmul(a, b), a);
  const auto root = sum(c);
  auto tape = Tape::record(root);
  const auto& nodes = tape.nodes();
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    for (const auto& in : nodes[i]->inputs) {
      if (!in->requires_grad) continue;
      auto it = std::find(nodes.begin(), nodes.end(), in.get());
      REQUIRE(it != nodes.end());
      CHECK(it - nodes.begin() < static_cast<long>(i));
    }
  }
}

TEST_CASE("NoGradGuard stops recording") {
  auto x = rand_t({3}, 3);
  {
    NoGradGuard g;
    CHECK_FALSE(grad_enabled());
    CHECK(mul(x, x).is_leaf());
  }
  CHECK(grad_enabled());
  CHECK_FALSE(mul(x, x).is_leaf());
}

TEST_CASE("broadcasting arithmetic") {
  auto a = Tensor::from_data({2, 1}, {1, 2});
  auto b = Tensor::from_data({3}, {10, 20, 30});
  auto c = add(a, b);
  CHECK(c.shape() == Shape{2, 3});
  CHECK(c.at({1, 2}) == 32.0);
  CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({4})), ShapeError);
}

TEST_CASE("matmul matches naive product") {
  for (auto [m, k, n] : {std::tuple{1, 1, 1}, {3, 5, 7}, {17, 9, 33}, {64, 64, 8}}) {
    auto a = rand_t({std::size_t(m), std::size_t(k)}, 4, false);
    auto b = rand_t({std::size_t(k), std::size_t(n)}, 5, false);
    auto ref = naive_matmul({a.data().begin(), a.data().end()}, {b.data().begin(), b.data().end()}, m, k, n);
    auto c = matmul(a, b);
    // Same summation order over k: bitwise equal.
    CHECK(testutil::bitwise_equal(c.data(), ref));
  }
  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2})), ShapeError);
}

TEST_CASE("batched matmul broadcasts leading axes") {
  auto a = rand_t({2, 3, 4, 5}, 6, false);
  auto b = rand_t({3, 5, 2}, 7, false);
  auto c = matmul(a, b);
  CHECK(c.shape() == Shape{2, 3, 4, 2});
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t h = 0; h < 3; ++h) {
      std::vector<double> as(ad.begin() + (i * 3 + h) * 20, ad.begin() + (i * 3 + h + 1) * 20);
      std::vector<double> bs(bd.begin() + h * 10, bd.begin() + (h + 1) * 10);
      auto ref = naive_matmul(as, bs, 4, 5, 2);
      for (std::size_t e = 0; e < 8; ++e) CHECK(c.data()[(i * 3 + h) * 8 + e] == ref[e]);
    }
}

TEST_CASE("op gradients agree with central differences") {
  Rng wr(99);
  auto probe = [&](Shape s) { return wr.uniform_tensor(std::move(s), -1.0, 1.0); };
  SUBCASE("matmul rank 2 and batched") {
    auto a = rand_t({3, 4}, 1), b = rand_t({4, 5}, 2), w = probe({3, 5});
    auto f = [&] { return sum(mul(matmul(a, b), w)); };
    CHECK(fd_rel_error(a, f) < 1e-8);
    CHECK(fd_rel_error(b, f) < 1e-8);
    auto p = rand_t({2, 2, 3, 4}, 3), q = rand_t({2, 1, 4, 3}, 4), w2 = probe({2, 2, 3, 3});
    auto g = [&] { return sum(mul(matmul(p, q), w2)); };
    CHECK(fd_rel_error(p, g) < 1e-8);
    CHECK(fd_rel_error(q, g) < 1e-8);
  }
  SUBCASE("broadcast add/sub/mul reduce gradients") {
    auto a = rand_t({2, 3}, 5), b = rand_t({3}, 6), w = probe({2, 3});
    auto f = [&] { return sum(mul(mul(sub(a, b), add(a, b)), w)); };
    CHECK(fd_rel_error(a, f) < 1e-8);
    CHECK(fd_rel_error(b, f) < 1e-8);
  }
  SUBCASE("elementwise") {
    auto x = rand_t({7}, 7), w = probe({7});
    CHECK(fd_rel_error(x, [&] { return sum(mul(sigmoid(x), w)); }) < 1e-8);
    CHECK(fd_rel_error(x, [&] { return sum(mul(tanh(x), w)); }) < 1e-8);
    CHECK(fd_rel_error(x, [&] { return sum(mul(exp(x), w)); }) < 1e-8);
    CHECK(fd_rel_error(x, [&] { return sum(mul(log(add_scalar(mul(x, x), 1.0)), w)); }) < 1e-8);
    CHECK(fd_rel_error(x, [&] { return sum(mul(div_scalar(mul_scalar(x, 3.0), 7.0), w)); }) < 1e-8);
  }
  SUBCASE("softmax and log-softmax") {
    auto x = rand_t({2, 5}, 8), w = probe({2, 5});
    CHECK(fd_rel_error(x, [&] { return sum(mul(softmax_last(x), w)); }) < 1e-7);
    CHECK(fd_rel_error(x, [&] { return sum(mul(log_softmax_last(x), w)); }) < 1e-7);
  }
  SUBCASE("reshape, permute, transpose") {
    auto x = rand_t({2, 3, 4}, 9), w = probe({4, 2, 3});
    CHECK(fd_rel_error(x, [&] { return sum(mul(permute(x, {2, 0, 1}), w)); }) < 1e-8);
    auto w2 = probe({2, 4, 3});
    CHECK(fd_rel_error(x, [&] { return sum(mul(transpose_last2(x), w2)); }) < 1e-8);
    auto w3 = probe({6, 4});
    CHECK(fd_rel_error(x, [&] { return sum(mul(reshape(x, {6, 4}), w3)); }) < 1e-8);
  }
  SUBCASE("layer norm") {
    auto x = rand_t({3, 6}, 10), g = rand_t({6}, 11), b = rand_t({6}, 12), w = probe({3, 6});
    auto f = [&] { return sum(mul(layer_norm(x, g, b), w)); };
    CHECK(fd_rel_error(x, f) < 1e-6);
    CHECK(fd_rel_error(g, f) < 1e-7);
    CHECK(fd_rel_error(b, f) < 1e-7);
  }
  SUBCASE("masked mean and prefix mean") {
    auto x = rand_t({2, 1, 4, 4}, 13);
    const auto causal = MaskSet::causal(4);
    auto w = probe({2, 1, 4});
    CHECK(fd_rel_error(x, [&] { return sum(masked_mean(x, causal)); }) < 1e-8);
    CHECK(fd_rel_error(x, [&] { return sum(mul(masked_prefix_mean(x, causal), w)); }) < 1e-8);
  }
  SUBCASE("embedding scatters into used rows") {
    auto table = rand_t({5, 3}, 14);
    const std::vector<int> ids{1, 3, 1, 4};
    auto w = probe({2, 2, 3});
    CHECK(fd_rel_error(table, [&] { return sum(mul(embedding(table, ids, {2, 2}), w)); }) < 1e-8);
  }
}

TEST_CASE("layer norm output statistics") {
  auto x = rand_t({8, 64}, 20, false);
  auto y = layer_norm(mul_scalar(x, 37.0), Tensor(), Tensor());
  for (std::size_t r = 0; r < 8; ++r) {
    double m = 0, v = 0;
    for (std::size_t j = 0; j < 64; ++j) m += y.data()[r * 64 + j];
    m /= 64;
    for (std::size_t j = 0; j < 64; ++j) v += (y.data()[r * 64 + j] - m) * (y.data()[r * 64 + j] - m);
    v /= 64;
    CHECK(std::abs(m) < 1e-10);
    CHECK(std::abs(v - 1.0) < 1e-6);
  }
}

TEST_CASE("masked fill and masked mean") {
  auto x = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  auto y = masked_fill_additive(x, MaskSet::causal(2));
  CHECK(y.at({0, 1}) == kMaskSentinel);
  CHECK(y.at({1, 1}) == 4.0);
  CHECK(masked_mean(x, MaskSet::causal(2)).item() == doctest::Approx((1 + 3 + 4) / 3.0).epsilon(1e-15));
  CHECK(masked_mean(x, MaskSet::none()).item() == 2.5);
  const MaskSet empty({1, 1, 1, 2}, {0, 0}, MaskKind::padding);
  CHECK_THROWS_AS(masked_mean(Tensor::zeros({1, 1, 2, 2}), empty), DegenerateMaskError);
}

TEST_CASE("softmax rows sum to one and masked entries vanish") {
  auto x = rand_t({1, 1, 3, 4}, 30, false);
  auto y = softmax_last(masked_fill_additive(x, MaskSet::padding({2}, 4)));
  for (std::size_t r = 0; r < 3; ++r) {
    CHECK(y.at({0, 0, r, 0}) + y.at({0, 0, r, 1}) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(y.at({0, 0, r, 2}) == 0.0);
    CHECK(y.at({0, 0, r, 3}) == 0.0);
  }
}
