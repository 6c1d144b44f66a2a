#include "zodiac/activations.hpp"

#include <cmath>
#include <memory>
#include <numbers>
#include <vector>

#include "zodiac/errors.hpp"
#include "zodiac/ops.hpp"

namespace zodiac {

namespace {

constexpr double kApproxSlope = 1.702;

double logistic(double v) { return 1.0 / (1.0 + std::exp(-v)); }

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

std::string_view to_string(GateKind kind) { return kind == GateKind::sigmoid ? "sigmoid" : "tanh"; }

std::optional<GateKind> parse_gate(std::string_view name) {
  if (name == "sigmoid" || name == "sigma") return GateKind::sigmoid;
  if (name == "tanh") return GateKind::tanh;
  return std::nullopt;
}

double gelu_exact(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_approx(double x) { return x * logistic(kApproxSlope * x); }

Tensor gelu_exact(const Tensor& x) {
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = gelu_exact(xv[i]);
  auto xn = x.node();
  return make_result(x.shape(), std::move(out), {x}, "gelu_exact",
                     [xn](std::span<const double>, std::span<const double> g) {
                       auto gx = xn->grad_buffer();
                       const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         const double v = xn->data[i];
                         const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
                         const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
                         gx[i] += g[i] * (cdf + v * pdf);
                       }
                     });
}

Tensor gelu_approx(const Tensor& x) {
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = gelu_approx(xv[i]);
  auto xn = x.node();
  return make_result(x.shape(), std::move(out), {x}, "gelu_approx",
                     [xn](std::span<const double>, std::span<const double> g) {
                       auto gx = xn->grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         const double v = xn->data[i];
                         const double s = logistic(kApproxSlope * v);
                         gx[i] += g[i] * (s + kApproxSlope * v * s * (1.0 - s));
                       }
                     });
}

double scalar_gate(double v, GateKind kind) { return kind == GateKind::sigmoid ? logistic(v) : std::tanh(v); }

Tensor scalar_gate(const Tensor& v, std::optional<GateKind> kind) {
  if (!kind) return v;
  return *kind == GateKind::sigmoid ? sigmoid(v) : tanh(v);
}

std::uint64_t site_id(std::string_view name) {
  // FNV-1a
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Tensor dropout_apply(const Tensor& x, const DropoutSpec& spec) {
  if (!(spec.rate >= 0.0 && spec.rate < 1.0)) {
    throw ContractError("dropout rate must lie in [0, 1), got " + std::to_string(spec.rate));
  }
  if (spec.mode == Mode::eval || spec.rate == 0.0) return x;

  const std::size_t n = x.numel();
  const std::size_t per_sample = x.rank() > 0 ? n / x.dim(0) : n;
  const double scale = 1.0 / (1.0 - spec.rate);
  std::uint64_t base = splitmix64(spec.seed);
  base = splitmix64(base ^ spec.step);
  base = splitmix64(base ^ spec.site);

  auto keep = std::make_shared<std::vector<double>>(n);
  std::uint64_t sample_key = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t e = i % per_sample;
    if (e == 0) sample_key = splitmix64(base ^ (spec.sample_offset + i / per_sample));
    const std::uint64_t h = splitmix64(sample_key + e * 0xD1B54A32D192ED03ULL);
    const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
    (*keep)[i] = u >= spec.rate ? scale : 0.0;
  }
  const auto xv = x.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = xv[i] * (*keep)[i];
  auto xn = x.node();
  return make_result(x.shape(), std::move(out), {x}, "dropout",
                     [xn, keep](std::span<const double>, std::span<const double> g) {
                       auto gx = xn->grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*keep)[i];
                     });
}

}  // namespace zodiac
