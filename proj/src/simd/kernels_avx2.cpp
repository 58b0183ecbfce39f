// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.

#include "pvudf/simd/kernels.hpp"

#include <immintrin.h>

#include <algorithm>
#include <cstdlib>
#include <vector>

namespace pvudf::simd::avx2 {
namespace {

constexpr std::size_t kRows = 6;    // micro-tile rows
constexpr std::size_t kCols = 8;    // micro-tile columns (two ymm)
constexpr std::size_t kDepth = 256; // k-block
constexpr std::size_t kWidth = 512; // n-block

inline __m256i lane_mask(std::size_t lanes) {
  // lanes in [0, 4]
  const __m256i index = _mm256_setr_epi64x(0, 1, 2, 3);
  return _mm256_cmpgt_epi64(_mm256_set1_epi64x(static_cast<long long>(lanes)), index);
}

// C tile (rows x cols, cols <= 8) += A[rows x depth] * panel[depth x 8].
template <std::size_t Rows>
void micro_kernel(std::size_t cols, std::size_t depth, const double* a, std::size_t lda,
                  const double* panel, double* c, std::size_t ldc) {
  const __m256i mask_lo = lane_mask(std::min<std::size_t>(cols, 4));
  const __m256i mask_hi = lane_mask(cols > 4 ? cols - 4 : 0);
  __m256d acc_lo[Rows];
  __m256d acc_hi[Rows];
  for (std::size_t r = 0; r < Rows; ++r) {
    acc_lo[r] = _mm256_maskload_pd(c + r * ldc, mask_lo);
    acc_hi[r] = _mm256_maskload_pd(c + r * ldc + 4, mask_hi);
  }
  for (std::size_t p = 0; p < depth; ++p) {
    const __m256d b_lo = _mm256_load_pd(panel + p * kCols);
    const __m256d b_hi = _mm256_load_pd(panel + p * kCols + 4);
    for (std::size_t r = 0; r < Rows; ++r) {
      const __m256d a_rp = _mm256_broadcast_sd(a + r * lda + p);
      acc_lo[r] = _mm256_fmadd_pd(a_rp, b_lo, acc_lo[r]);
      acc_hi[r] = _mm256_fmadd_pd(a_rp, b_hi, acc_hi[r]);
    }
  }
  for (std::size_t r = 0; r < Rows; ++r) {
    _mm256_maskstore_pd(c + r * ldc, mask_lo, acc_lo[r]);
    _mm256_maskstore_pd(c + r * ldc + 4, mask_hi, acc_hi[r]);
  }
}

using MicroKernel = void (*)(std::size_t, std::size_t, const double*, std::size_t, const double*,
                             double*, std::size_t);
constexpr MicroKernel kKernels[kRows + 1] = {nullptr,          micro_kernel<1>, micro_kernel<2>,
                                             micro_kernel<3>,  micro_kernel<4>, micro_kernel<5>,
                                             micro_kernel<6>};

struct AlignedBuffer {
  double* data = nullptr;
  std::size_t capacity = 0;
  ~AlignedBuffer() { std::free(data); }
  double* reserve(std::size_t count) {
    if (count > capacity) {
      std::free(data);
      data = static_cast<double*>(std::aligned_alloc(32, ((count * sizeof(double) + 31) / 32) * 32));
      capacity = count;
    }
    return data;
  }
};

}  // namespace

void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
          const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  if (!accumulate) {
    for (std::size_t i = 0; i < m; ++i) std::fill_n(c + i * ldc, n, 0.0);
  }
  if (m == 0 || n == 0 || k == 0) return;

  thread_local AlignedBuffer packed;
  for (std::size_t jc = 0; jc < n; jc += kWidth) {
    const std::size_t nb = std::min(kWidth, n - jc);
    const std::size_t panels = (nb + kCols - 1) / kCols;
    for (std::size_t pc = 0; pc < k; pc += kDepth) {
      const std::size_t kb = std::min(kDepth, k - pc);
      double* pack = packed.reserve(panels * kb * kCols);
      for (std::size_t q = 0; q < panels; ++q) {
        const std::size_t col0 = jc + q * kCols;
        const std::size_t cols = std::min(kCols, n - col0);
        double* dst = pack + q * kb * kCols;
        for (std::size_t p = 0; p < kb; ++p) {
          const double* src = b + (pc + p) * ldb + col0;
          std::size_t j = 0;
          for (; j < cols; ++j) dst[p * kCols + j] = src[j];
          for (; j < kCols; ++j) dst[p * kCols + j] = 0.0;
        }
      }
      for (std::size_t ic = 0; ic < m; ic += kRows) {
        const std::size_t rows = std::min(kRows, m - ic);
        const MicroKernel kernel = kKernels[rows];
        for (std::size_t q = 0; q < panels; ++q) {
          const std::size_t col0 = jc + q * kCols;
          const std::size_t cols = std::min(kCols, n - col0);
          kernel(cols, kb, a + ic * lda + pc, lda, pack + q * kb * kCols, c + ic * ldc + col0, ldc);
        }
      }
    }
  }
}

void axpy(std::size_t n, double alpha, const double* x, double* y) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  if (i < n) {
    const __m256i mask = lane_mask(n - i);
    const __m256d vy = _mm256_maskload_pd(y + i, mask);
    const __m256d vx = _mm256_maskload_pd(x + i, mask);
    _mm256_maskstore_pd(y + i, mask, _mm256_fmadd_pd(va, vx, vy));
  }
}

double dot(std::size_t n, const double* x, const double* y) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
  }
  if (i + 4 <= n) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    i += 4;
  }
  if (i < n) {
    const __m256i mask = lane_mask(n - i);
    acc1 = _mm256_fmadd_pd(_mm256_maskload_pd(x + i, mask), _mm256_maskload_pd(y + i, mask), acc1);
  }
  const __m256d acc = _mm256_add_pd(acc0, acc1);
  const __m128d half = _mm_add_pd(_mm256_castpd256_pd128(acc), _mm256_extractf128_pd(acc, 1));
  return _mm_cvtsd_f64(_mm_add_sd(half, _mm_unpackhi_pd(half, half)));
}

void axpy8(std::size_t n, const double* alpha, const double* const* x, double* y) {
  __m256d va[8];
  for (int r = 0; r < 8; ++r) va[r] = _mm256_set1_pd(alpha[r]);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d acc = _mm256_loadu_pd(y + i);
    for (int r = 0; r < 8; ++r) acc = _mm256_fmadd_pd(va[r], _mm256_loadu_pd(x[r] + i), acc);
    _mm256_storeu_pd(y + i, acc);
  }
  if (i < n) {
    const __m256i mask = lane_mask(n - i);
    __m256d acc = _mm256_maskload_pd(y + i, mask);
    for (int r = 0; r < 8; ++r) acc = _mm256_fmadd_pd(va[r], _mm256_maskload_pd(x[r] + i, mask), acc);
    _mm256_maskstore_pd(y + i, mask, acc);
  }
}

void dot8(std::size_t n, const double* const* x, const double* y, double* out) {
  __m256d acc[8];
  for (int r = 0; r < 8; ++r) acc[r] = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d vy = _mm256_loadu_pd(y + i);
    for (int r = 0; r < 8; ++r) acc[r] = _mm256_fmadd_pd(_mm256_loadu_pd(x[r] + i), vy, acc[r]);
  }
  if (i < n) {
    const __m256i mask = lane_mask(n - i);
    const __m256d vy = _mm256_maskload_pd(y + i, mask);
    for (int r = 0; r < 8; ++r) {
      acc[r] = _mm256_fmadd_pd(_mm256_maskload_pd(x[r] + i, mask), vy, acc[r]);
    }
  }
  for (int r = 0; r < 8; ++r) {
    const __m128d half =
        _mm_add_pd(_mm256_castpd256_pd128(acc[r]), _mm256_extractf128_pd(acc[r], 1));
    out[r] = _mm_cvtsd_f64(_mm_add_sd(half, _mm_unpackhi_pd(half, half)));
  }
}

}  // namespace pvudf::simd::avx2
