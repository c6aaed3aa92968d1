#pragma once

#include <cstddef>
#include <vector>

namespace flsim::kernels {

// C[M,N] (+)= op(A)[M,K] * op(B)[K,N]. With trans_a, A is stored (K, M); with
// trans_b, B is stored (N, K). Each output element accumulates over k in
// ascending order regardless of layout.
inline void gemm(std::size_t M, std::size_t N, std::size_t K, const float* A, bool trans_a,
                 const float* B, bool trans_b, float* C, bool accumulate) {
  std::vector<float> bt;
  if (trans_b) {
    bt.resize(K * N);
    for (std::size_t j = 0; j < N; ++j)
      for (std::size_t k = 0; k < K; ++k) bt[k * N + j] = B[j * K + k];
    B = bt.data();
  }
  for (std::size_t i = 0; i < M; ++i) {
    float* __restrict crow = C + i * N;
    if (!accumulate)
      for (std::size_t j = 0; j < N; ++j) crow[j] = 0.0f;
    for (std::size_t k = 0; k < K; ++k) {
      const float a = trans_a ? A[k * M + i] : A[i * K + k];
      const float* __restrict brow = B + k * N;
      for (std::size_t j = 0; j < N; ++j) crow[j] += a * brow[j];
    }
  }
}

}  // namespace flsim::kernels
