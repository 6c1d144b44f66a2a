#include "zodiac/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "broadcast.hpp"
#include "zodiac/errors.hpp"

namespace zodiac {

namespace {

using detail::broadcast_shapes;
using detail::broadcast_strides;
using detail::for_each_broadcast;

std::span<double> grad_of(const std::shared_ptr<Node>& n) { return n->grad_buffer(); }

template <class F, class DF>
Tensor unary(const Tensor& x, const char* name, F f, DF df) {
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  auto xn = x.node();
  return make_result(x.shape(), std::move(out), {x}, name,
                     [xn, df](std::span<const double> y, std::span<const double> g) {
                       if (!xn->requires_grad) return;
                       auto gx = grad_of(xn);
                       const auto& xv = xn->data;
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xv[i], y[i]);
                     });
}

// Binary elementwise op. da/db return the partial derivative given (a, b).
template <class F, class DA, class DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, F f, DA da, DB db) {
  auto an = a.node();
  auto bn = b.node();
  if (a.shape() == b.shape()) {
    const auto av = a.data();
    const auto bv = b.data();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i], bv[i]);
    return make_result(a.shape(), std::move(out), {a, b}, name,
                       [an, bn, da, db](std::span<const double>, std::span<const double> g) {
                         const auto& av = an->data;
                         const auto& bv = bn->data;
                         if (an->requires_grad) {
                           auto ga = grad_of(an);
                           for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * da(av[i], bv[i]);
                         }
                         if (bn->requires_grad) {
                           auto gb = grad_of(bn);
                           for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * db(av[i], bv[i]);
                         }
                       });
  }
  Shape out_shape = broadcast_shapes(a.shape(), b.shape());
  auto sa = broadcast_strides(a.shape(), out_shape);
  auto sb = broadcast_strides(b.shape(), out_shape);
  std::vector<double> out(shape_numel(out_shape));
  const auto av = a.data();
  const auto bv = b.data();
  for_each_broadcast(out_shape, sa, sb, [&](std::size_t i, std::size_t oa, std::size_t ob) {
    out[i] = f(av[oa], bv[ob]);
  });
  return make_result(out_shape, std::move(out), {a, b}, name,
                     [an, bn, da, db, out_shape, sa, sb](std::span<const double>,
                                                         std::span<const double> g) {
                       const auto& av = an->data;
                       const auto& bv = bn->data;
                       std::span<double> ga;
                       std::span<double> gb;
                       if (an->requires_grad) ga = grad_of(an);
                       if (bn->requires_grad) gb = grad_of(bn);
                       for_each_broadcast(out_shape, sa, sb,
                                          [&](std::size_t i, std::size_t oa, std::size_t ob) {
                                            if (!ga.empty()) ga[oa] += g[i] * da(av[oa], bv[ob]);
                                            if (!gb.empty()) gb[ob] += g[i] * db(av[oa], bv[ob]);
                                          });
                     });
}

}  // namespace

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  auto xn = x.node();
  return make_result(std::move(shape), xn->data, {x}, "reshape",
                     [xn](std::span<const double>, std::span<const double> g) {
                       auto gx = grad_of(xn);
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                     });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
  const auto& in = x.shape();
  if (order.size() != in.size()) throw ShapeError("permute order rank mismatch for " + shape_str(in));
  std::vector<std::size_t> in_strides(in.size());
  std::size_t stride = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    in_strides[i] = stride;
    stride *= in[i];
  }
  Shape out_shape(in.size());
  std::vector<std::size_t> src(in.size());
  std::vector<bool> seen(in.size(), false);
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (order[i] >= in.size() || seen[order[i]]) throw ShapeError("invalid permutation");
    seen[order[i]] = true;
    out_shape[i] = in[order[i]];
    src[i] = in_strides[order[i]];
  }
  std::vector<double> out(x.numel());
  const auto xv = x.data();
  for_each_broadcast(out_shape, src, src,
                     [&](std::size_t i, std::size_t o, std::size_t) { out[i] = xv[o]; });
  auto xn = x.node();
  return make_result(out_shape, std::move(out), {x}, "permute",
                     [xn, out_shape, src](std::span<const double>, std::span<const double> g) {
                       auto gx = grad_of(xn);
                       for_each_broadcast(out_shape, src, src,
                                          [&](std::size_t i, std::size_t o, std::size_t) { gx[o] += g[i]; });
                     });
}

Tensor transpose_last2(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("transpose_last2 needs rank >= 2, got " + shape_str(x.shape()));
  std::vector<std::size_t> order(x.rank());
  std::iota(order.begin(), order.end(), 0);
  std::swap(order[order.size() - 1], order[order.size() - 2]);
  return permute(x, order);
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor add_scalar(const Tensor& x, double c) {
  return unary(
      x, "add_scalar", [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& x, double c) {
  return unary(
      x, "mul_scalar", [c](double v) { return v * c; }, [c](double, double) { return c; });
}

Tensor div_scalar(const Tensor& x, double c) {
  return unary(
      x, "div_scalar", [c](double v) { return v / c; }, [c](double, double) { return 1.0 / c; });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, "sigmoid", [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, "tanh", [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor exp(const Tensor& x) {
  return unary(
      x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(
      x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
             bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_nt_acc(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                 double* c) {
  // Transpose B once so the inner loop runs over contiguous memory.
  std::vector<double> bt(k * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  }
  gemm_nn(m, n, k, a, bt.data(), c, true);
}

void gemm_tn_acc(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                 double* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw ShapeError("matmul needs rank >= 2 operands, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.dim(-2);
  const std::size_t p = a.dim(-1);
  const std::size_t n = b.dim(-1);
  if (b.dim(-2) != p) {
    throw ShapeError("matmul inner dimensions differ: " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  auto an = a.node();
  auto bn = b.node();

  if (b.rank() == 2) {
    // Fold every leading axis of `a` into its rows.
    const std::size_t rows = a.numel() / p;
    Shape out_shape = a.shape();
    out_shape.back() = n;
    std::vector<double> out(rows * n);
    gemm_nn(rows, n, p, a.data().data(), b.data().data(), out.data(), false);
    return make_result(std::move(out_shape), std::move(out), {a, b}, "matmul",
                       [an, bn, rows, n, p](std::span<const double>, std::span<const double> g) {
                         if (an->requires_grad) {
                           gemm_nt_acc(rows, p, n, g.data(), bn->data.data(), grad_of(an).data());
                         }
                         if (bn->requires_grad) {
                           gemm_tn_acc(p, n, rows, an->data.data(), g.data(), grad_of(bn).data());
                         }
                       });
  }

  const Shape a_batch(a.shape().begin(), a.shape().end() - 2);
  const Shape b_batch(b.shape().begin(), b.shape().end() - 2);
  const Shape batch = broadcast_shapes(a_batch, b_batch);
  auto sa = broadcast_strides(a_batch, batch);
  auto sb = broadcast_strides(b_batch, batch);
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<double> out(shape_numel(out_shape));
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  for_each_broadcast(batch, sa, sb, [&](std::size_t i, std::size_t oa, std::size_t ob) {
    gemm_nn(m, n, p, ad + oa * m * p, bd + ob * p * n, out.data() + i * m * n, false);
  });
  return make_result(std::move(out_shape), std::move(out), {a, b}, "matmul",
                     [an, bn, batch, sa, sb, m, n, p](std::span<const double>,
                                                      std::span<const double> g) {
                       std::span<double> ga;
                       std::span<double> gb;
                       if (an->requires_grad) ga = grad_of(an);
                       if (bn->requires_grad) gb = grad_of(bn);
                       const double* ad = an->data.data();
                       const double* bd = bn->data.data();
                       for_each_broadcast(batch, sa, sb, [&](std::size_t i, std::size_t oa, std::size_t ob) {
                         const double* gi = g.data() + i * m * n;
                         if (!ga.empty()) gemm_nt_acc(m, p, n, gi, bd + ob * p * n, ga.data() + oa * m * p);
                         if (!gb.empty()) gemm_tn_acc(p, n, m, ad + oa * m * p, gi, gb.data() + ob * p * n);
                       });
                     });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  auto y = matmul(x, weight);
  return bias.defined() ? add(y, bias) : y;
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  auto xn = x.node();
  return make_result({1}, {s}, {x}, "sum", [xn](std::span<const double>, std::span<const double> g) {
    auto gx = grad_of(xn);
    for (auto& v : gx) v += g[0];
  });
}

Tensor mean(const Tensor& x) { return div_scalar(sum(x), static_cast<double>(x.numel())); }

Tensor softmax_last(const Tensor& x) {
  const std::size_t n = x.dim(-1);
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < xv.size(); r += n) {
    double mx = xv[r];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xv[r + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out[r + j] = std::exp(xv[r + j] - mx);
      s += out[r + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[r + j] /= s;
  }
  auto xn = x.node();
  return make_result(x.shape(), std::move(out), {x}, "softmax",
                     [xn, n](std::span<const double> y, std::span<const double> g) {
                       auto gx = grad_of(xn);
                       for (std::size_t r = 0; r < y.size(); r += n) {
                         double dot = 0.0;
                         for (std::size_t j = 0; j < n; ++j) dot += g[r + j] * y[r + j];
                         for (std::size_t j = 0; j < n; ++j) gx[r + j] += y[r + j] * (g[r + j] - dot);
                       }
                     });
}

Tensor log_softmax_last(const Tensor& x) {
  const std::size_t n = x.dim(-1);
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < xv.size(); r += n) {
    double mx = xv[r];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xv[r + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(xv[r + j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < n; ++j) out[r + j] = xv[r + j] - lse;
  }
  auto xn = x.node();
  return make_result(x.shape(), std::move(out), {x}, "log_softmax",
                     [xn, n](std::span<const double> y, std::span<const double> g) {
                       auto gx = grad_of(xn);
                       for (std::size_t r = 0; r < y.size(); r += n) {
                         double gs = 0.0;
                         for (std::size_t j = 0; j < n; ++j) gs += g[r + j];
                         for (std::size_t j = 0; j < n; ++j) gx[r + j] += g[r + j] - std::exp(y[r + j]) * gs;
                       }
                     });
}

Tensor masked_fill_additive(const Tensor& x, const MaskSet& mask) {
  if (mask.empty()) return x;
  auto bits = std::make_shared<std::vector<std::uint8_t>>(mask.broadcast_to(x.shape()));
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = (*bits)[i] ? xv[i] : kMaskSentinel;
  auto xn = x.node();
  return make_result(x.shape(), std::move(out), {x}, "masked_fill",
                     [xn, bits](std::span<const double>, std::span<const double> g) {
                       auto gx = grad_of(xn);
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         if ((*bits)[i]) gx[i] += g[i];
                       }
                     });
}

namespace {

void require_rank2(const Tensor& x, const char* op) {
  if (x.rank() < 2) throw ShapeError(std::string(op) + " needs rank >= 2, got " + shape_str(x.shape()));
}

}  // namespace

std::vector<double> masked_mean_denominators(const Shape& x_shape, const MaskSet& mask) {
  const std::size_t slice = x_shape[x_shape.size() - 1] * x_shape[x_shape.size() - 2];
  const std::size_t count = shape_numel(x_shape) / slice;
  std::vector<double> den(count, static_cast<double>(slice));
  if (mask.empty()) return den;
  const auto bits = mask.broadcast_to(x_shape);
  for (std::size_t s = 0; s < count; ++s) {
    double c = 0.0;
    for (std::size_t i = 0; i < slice; ++i) c += bits[s * slice + i];
    den[s] = c;
  }
  return den;
}

Tensor masked_mean(const Tensor& x, const MaskSet& mask) {
  require_rank2(x, "masked_mean");
  const std::size_t slice = x.dim(-1) * x.dim(-2);
  const std::size_t count = x.numel() / slice;
  Shape out_shape(x.shape().begin(), x.shape().end() - 2);
  if (out_shape.empty()) out_shape = {1};
  const auto xv = x.data();
  std::vector<double> out(count);
  std::shared_ptr<std::vector<double>> weights;
  std::vector<double> den(count, static_cast<double>(slice));
  if (mask.empty()) {
    for (std::size_t s = 0; s < count; ++s) {
      double acc = 0.0;
      for (std::size_t i = 0; i < slice; ++i) acc += xv[s * slice + i];
      out[s] = acc / den[s];
    }
  } else {
    const auto bits = mask.broadcast_to(x.shape());
    weights = std::make_shared<std::vector<double>>(bits.begin(), bits.end());
    const auto& w = *weights;
    for (std::size_t s = 0; s < count; ++s) {
      double acc = 0.0;
      double c = 0.0;
      for (std::size_t i = 0; i < slice; ++i) {
        acc += xv[s * slice + i] * w[s * slice + i];
        c += w[s * slice + i];
      }
      if (c == 0.0) throw DegenerateMaskError("masked_mean over a slice with no kept entries");
      den[s] = c;
      out[s] = acc / c;
    }
  }
  auto xn = x.node();
  return make_result(std::move(out_shape), std::move(out), {x}, "masked_mean",
                     [xn, weights, den, slice](std::span<const double>, std::span<const double> g) {
                       auto gx = grad_of(xn);
                       for (std::size_t s = 0; s < den.size(); ++s) {
                         const double gs = g[s] / den[s];
                         for (std::size_t i = 0; i < slice; ++i) {
                           gx[s * slice + i] += weights ? gs * (*weights)[s * slice + i] : gs;
                         }
                       }
                     });
}

Tensor masked_prefix_mean(const Tensor& x, const MaskSet& mask) {
  require_rank2(x, "masked_prefix_mean");
  const std::size_t rows = x.dim(-2);
  const std::size_t cols = x.dim(-1);
  const std::size_t slice = rows * cols;
  const std::size_t count = x.numel() / slice;
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  const auto xv = x.data();
  auto weights = std::make_shared<std::vector<double>>();
  if (!mask.empty()) {
    const auto bits = mask.broadcast_to(x.shape());
    weights->assign(bits.begin(), bits.end());
  }
  const bool masked = !weights->empty();
  std::vector<double> out(count * rows);
  std::vector<double> den(count * rows);
  for (std::size_t s = 0; s < count; ++s) {
    double acc = 0.0;
    double c = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < cols; ++j) {
        const std::size_t i = s * slice + r * cols + j;
        if (masked) {
          acc += xv[i] * (*weights)[i];
          c += (*weights)[i];
        } else {
          acc += xv[i];
        }
      }
      if (!masked) c = static_cast<double>((r + 1) * cols);
      if (c == 0.0) throw DegenerateMaskError("masked_prefix_mean over a prefix with no kept entries");
      den[s * rows + r] = c;
      out[s * rows + r] = acc / c;
    }
  }
  auto xn = x.node();
  return make_result(std::move(out_shape), std::move(out), {x}, "masked_prefix_mean",
                     [xn, weights, den, rows, cols, count](std::span<const double>,
                                                          std::span<const double> g) {
                       auto gx = grad_of(xn);
                       const std::size_t slice = rows * cols;
                       for (std::size_t s = 0; s < count; ++s) {
                         // Entry (r, j) feeds every prefix mean i >= r.
                         double tail = 0.0;
                         for (std::size_t r = rows; r-- > 0;) {
                           tail += g[s * rows + r] / den[s * rows + r];
                           for (std::size_t j = 0; j < cols; ++j) {
                             const std::size_t i = s * slice + r * cols + j;
                             gx[i] += weights->empty() ? tail : tail * (*weights)[i];
                           }
                         }
                       }
                     });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t d = x.dim(-1);
  if (gamma.defined() && gamma.numel() != d) throw ShapeError("layer_norm gamma size mismatch");
  if (beta.defined() && beta.numel() != d) throw ShapeError("layer_norm beta size mismatch");
  const auto xv = x.data();
  const std::size_t rows = xv.size() / d;
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  auto inv = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * is;
      (*xhat)[r * d + j] = h;
      double y = h;
      if (gamma.defined()) y *= gamma.data()[j];
      if (beta.defined()) y += beta.data()[j];
      out[r * d + j] = y;
    }
  }
  auto xn = x.node();
  std::shared_ptr<Node> gn = gamma.defined() ? gamma.node() : nullptr;
  std::shared_ptr<Node> bn = beta.defined() ? beta.node() : nullptr;
  std::vector<Tensor> inputs{x};
  if (gamma.defined()) inputs.push_back(gamma);
  if (beta.defined()) inputs.push_back(beta);
  return make_result(x.shape(), std::move(out), inputs, "layer_norm",
                     [xn, gn, bn, xhat, inv, d, rows](std::span<const double>, std::span<const double> g) {
                       std::span<double> gg;
                       std::span<double> gb;
                       if (gn && gn->requires_grad) gg = grad_of(gn);
                       if (bn && bn->requires_grad) gb = grad_of(bn);
                       std::span<double> gx;
                       if (xn->requires_grad) gx = grad_of(xn);
                       std::vector<double> dh(d);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* h = xhat->data() + r * d;
                         const double* gr = g.data() + r * d;
                         double s1 = 0.0;
                         double s2 = 0.0;
                         for (std::size_t j = 0; j < d; ++j) {
                           if (!gg.empty()) gg[j] += gr[j] * h[j];
                           if (!gb.empty()) gb[j] += gr[j];
                           dh[j] = gn ? gr[j] * gn->data[j] : gr[j];
                           s1 += dh[j];
                           s2 += dh[j] * h[j];
                         }
                         if (gx.empty()) continue;
                         const double scale = (*inv)[r] / static_cast<double>(d);
                         for (std::size_t j = 0; j < d; ++j) {
                           gx[r * d + j] += scale * (static_cast<double>(d) * dh[j] - s1 - h[j] * s2);
                         }
                       }
                     });
}

Tensor embedding(const Tensor& table, std::span<const int> ids, const Shape& ids_shape) {
  if (table.rank() != 2) throw ShapeError("embedding table must be [V, D]");
  if (shape_numel(ids_shape) != ids.size()) throw ShapeError("embedding ids do not match ids_shape");
  const std::size_t vocab = table.dim(0);
  const std::size_t d = table.dim(1);
  auto rows = std::make_shared<std::vector<int>>(ids.begin(), ids.end());
  std::vector<double> out(ids.size() * d);
  const auto tv = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw ContractError("token id " + std::to_string(ids[i]) + " outside vocabulary of " +
                          std::to_string(vocab));
    }
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  Shape out_shape = ids_shape;
  out_shape.push_back(d);
  auto tn = table.node();
  return make_result(std::move(out_shape), std::move(out), {table}, "embedding",
                     [tn, rows, d](std::span<const double>, std::span<const double> g) {
                       auto gt = grad_of(tn);
                       for (std::size_t i = 0; i < rows->size(); ++i) {
                         double* dst = gt.data() + static_cast<std::size_t>((*rows)[i]) * d;
                         for (std::size_t j = 0; j < d; ++j) dst[j] += g[i * d + j];
                       }
                     });
}

}  // namespace zodiac
