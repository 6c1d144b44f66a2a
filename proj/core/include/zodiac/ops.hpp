#pragma once

// Differentiable tensor operations. Every op records its gradient rule when
// any input requires grad and recording is enabled.

#include <cstddef>
#include <span>
#include <vector>

#include "zodiac/mask.hpp"
#include "zodiac/tensor.hpp"

namespace zodiac {

/// Finite stand-in for -inf in masked attention logits.
inline constexpr double kMaskSentinel = -1e9;

// Shape manipulation.
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
Tensor transpose_last2(const Tensor& x);

// Elementwise arithmetic with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& x, double c);
Tensor mul_scalar(const Tensor& x, double c);
Tensor div_scalar(const Tensor& x, double c);

// Elementwise nonlinearities.
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);

/// Batched matrix product over the last two axes; leading axes broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);

/// x @ weight + bias with weight stored [in, out]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Max-subtracted softmax over the last axis.
Tensor softmax_last(const Tensor& x);
Tensor log_softmax_last(const Tensor& x);

/// Replaces entries where the mask is 0 with kMaskSentinel.
Tensor masked_fill_additive(const Tensor& x, const MaskSet& mask);

/// Mean over the last two axes, one value per leading index. With a mask the
/// sum runs over kept entries and divides by their count.
Tensor masked_mean(const Tensor& x, const MaskSet& mask);

/// Like masked_mean but cumulative over query rows: entry i pools rows 0..i
/// of each [L_q, L_k] slice. Result shape is [..., L_q]; the last entry equals
/// masked_mean bitwise.
Tensor masked_prefix_mean(const Tensor& x, const MaskSet& mask);

/// Per-slice denominators masked_mean divides by, for a tensor of shape `x_shape`.
std::vector<double> masked_mean_denominators(const Shape& x_shape, const MaskSet& mask);

/// Normalizes over the last axis; gamma/beta ([D]) may be undefined.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-9);

/// Gathers rows of `table` [V, D] for `ids` laid out as `ids_shape`.
Tensor embedding(const Tensor& table, std::span<const int> ids, const Shape& ids_shape);

/// Raw row-major GEMM kernels, exposed for benchmarks and tests.
/// C[m,n] (+)= A[m,k] B[k,n]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
             bool accumulate);
/// C[m,n] += A[m,k] B[n,k]^T
void gemm_nt_acc(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                 double* c);
/// C[m,n] += A[k,m]^T B[k,n]
void gemm_tn_acc(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                 double* c);

}  // namespace zodiac
