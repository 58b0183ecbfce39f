#include "pvudf/simd/kernels.hpp"

namespace pvudf::simd::scalar {

void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
          const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    double* c_row = c + i * ldc;
    if (!accumulate) {
      for (std::size_t j = 0; j < n; ++j) c_row[j] = 0.0;
    }
    // i-p-j order keeps each element's sum in p order.
    for (std::size_t p = 0; p < k; ++p) {
      const double a_ip = a[i * lda + p];
      const double* b_row = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) c_row[j] += a_ip * b_row[j];
    }
  }
}

void axpy(std::size_t n, double alpha, const double* x, double* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

double dot(std::size_t n, const double* x, const double* y) {
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += x[i] * y[i];
  return sum;
}

void axpy8(std::size_t n, const double* alpha, const double* const* x, double* y) {
  for (std::size_t i = 0; i < n; ++i) {
    double acc = y[i];
    for (int r = 0; r < 8; ++r) acc += alpha[r] * x[r][i];
    y[i] = acc;
  }
}

void dot8(std::size_t n, const double* const* x, const double* y, double* out) {
  for (int r = 0; r < 8; ++r) out[r] = dot(n, x[r], y);
}

}  // namespace pvudf::simd::scalar
