#pragma once

// Packed, register-blocked matrix product used by the convolution and matmul
// kernels. Plain loops sized so GCC vectorizes the micro-kernel; the summation
// order is fixed, so results are deterministic.

#include <algorithm>
#include <cstddef>
#include <vector>

namespace sttr::detail {

/// Read-only strided matrix: element (r, c) lives at p[r * rs + c * cs].
template <class T>
struct MatRef {
  const T* p;
  std::size_t rs, cs;
  T operator()(std::size_t r, std::size_t c) const { return p[r * rs + c * cs]; }
  MatRef t() const { return {p, cs, rs}; }
};

template <class T>
MatRef<T> row_major(const T* p, std::size_t cols) {
  return {p, cols, 1};
}

inline constexpr std::size_t kGemmMR = 4;
inline constexpr std::size_t kGemmNR = 8;
inline constexpr std::size_t kGemmKC = 256;
inline constexpr std::size_t kGemmNC = 2048;

template <class T>
inline void gemm_micro(std::size_t kc, const T* __restrict a, const T* __restrict b, T* c, std::size_t ldc,
                       std::size_t mr, std::size_t nr) {
  T acc[kGemmMR][kGemmNR] = {};
  for (std::size_t q = 0; q < kc; ++q) {
    const T* bq = b + q * kGemmNR;
    const T* aq = a + q * kGemmMR;
    for (std::size_t i = 0; i < kGemmMR; ++i) {
      const T ai = aq[i];
      for (std::size_t j = 0; j < kGemmNR; ++j) acc[i][j] += ai * bq[j];
    }
  }
  if (mr == kGemmMR && nr == kGemmNR) {
    for (std::size_t i = 0; i < kGemmMR; ++i)
      for (std::size_t j = 0; j < kGemmNR; ++j) c[i * ldc + j] += acc[i][j];
    return;
  }
  for (std::size_t i = 0; i < mr; ++i)
    for (std::size_t j = 0; j < nr; ++j) c[i * ldc + j] += acc[i][j];
}

/// C[M x N] (row-major, leading dimension ldc) += A[M x K] * B[K x N].
template <class T>
void gemm_acc(std::size_t M, std::size_t N, std::size_t K, MatRef<T> A, MatRef<T> B, T* C, std::size_t ldc) {
  if (M == 0 || N == 0 || K == 0) return;
  constexpr std::size_t MR = kGemmMR, NR = kGemmNR;
  thread_local std::vector<T> pa, pb;
  const std::size_t mpanels = (M + MR - 1) / MR;
  for (std::size_t jc = 0; jc < N; jc += kGemmNC) {
    const std::size_t nc = std::min(kGemmNC, N - jc);
    const std::size_t npanels = (nc + NR - 1) / NR;
    for (std::size_t pc = 0; pc < K; pc += kGemmKC) {
      const std::size_t kc = std::min(kGemmKC, K - pc);
      pb.resize(npanels * kc * NR);
      for (std::size_t jp = 0; jp < npanels; ++jp) {
        const std::size_t j0 = jc + jp * NR, nr = std::min(NR, N - j0);
        T* dst = pb.data() + jp * kc * NR;
        for (std::size_t q = 0; q < kc; ++q) {
          for (std::size_t j = 0; j < nr; ++j) dst[q * NR + j] = B(pc + q, j0 + j);
          for (std::size_t j = nr; j < NR; ++j) dst[q * NR + j] = T(0);
        }
      }
      pa.resize(mpanels * kc * MR);
      for (std::size_t ip = 0; ip < mpanels; ++ip) {
        const std::size_t i0 = ip * MR, mr = std::min(MR, M - i0);
        T* dst = pa.data() + ip * kc * MR;
        for (std::size_t q = 0; q < kc; ++q) {
          for (std::size_t i = 0; i < mr; ++i) dst[q * MR + i] = A(i0 + i, pc + q);
          for (std::size_t i = mr; i < MR; ++i) dst[q * MR + i] = T(0);
        }
      }
      for (std::size_t ip = 0; ip < mpanels; ++ip) {
        const std::size_t i0 = ip * MR, mr = std::min(MR, M - i0);
        for (std::size_t jp = 0; jp < npanels; ++jp) {
          const std::size_t j0 = jc + jp * NR, nr = std::min(NR, N - j0);
          gemm_micro(kc, pa.data() + ip * kc * MR, pb.data() + jp * kc * NR, C + i0 * ldc + j0, ldc, mr, nr);
        }
      }
    }
  }
}

}  // namespace sttr::detail
