#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "flsim/tensor.hpp"

// Differentiable tensor operations. Every op validates shapes and throws
// ShapeError naming the op and the offending shapes. Reductions run in a fixed
// sequential row-major order, so results are bitwise reproducible.
namespace flsim::ops {

// a + b where b's shape equals a trailing suffix of a's shape (bias add,
// positional embedding add, residual add).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float factor);
Tensor square(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// a: (..., M, K); b: (K, N) shared across the leading dims, or (..., K, N)
// with the same leading dims as a.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm);
Tensor transpose(const Tensor& x, std::size_t axis0, std::size_t axis1);

// x: (B, C, H, W); weight: (O, C, kh, kw); bias: (O) or undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);
Tensor max_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride);
Tensor avg_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride);

Tensor relu(const Tensor& x);
// Exact (erf) form.
Tensor gelu(const Tensor& x);
Tensor softmax(const Tensor& x);

// Normalizes over the last axis; gamma/beta have the last axis' extent.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);

struct RunningStats {
  std::vector<float> mean;
  std::vector<float> var;
};

// x: (B, C, ...). Train mode normalizes with batch statistics (biased
// variance) and updates `stats` as new = (1 - momentum) * old + momentum *
// batch using the unbiased variance; B == 1 is rejected. Eval mode applies
// the fixed affine map given by `stats`.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, RunningStats& stats,
                  bool training, float momentum = 0.1f, float eps = 1e-5f);

// x: (B, C, ...); statistics per (sample, group of C / groups channels).
Tensor group_norm(const Tensor& x, std::size_t groups, const Tensor& gamma, const Tensor& beta,
                  float eps = 1e-5f);

// q, k, v: (..., T, d). softmax(q k^T / sqrt(d)) v.
Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v);

// table: (V, D) -> (ids.size(), D).
Tensor embedding(const Tensor& table, std::span<const std::size_t> ids);

// x: (B, N, D), token: (D) -> (B, N + 1, D) with token at position 0.
Tensor prepend_token(const Tensor& x, const Tensor& token);
// x: (B, T, D) -> (B, D), the row at position `index` of every sample.
Tensor select_token(const Tensor& x, std::size_t index);

// Mean negative log-likelihood of integer labels under softmax(logits).
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace flsim::ops
