#pragma once

// Dense arithmetic kernels with a scalar reference path and vectorized
// variants picked at runtime.
//
// Every kernel accumulates each output element in a fixed order that does not
// depend on how many rows are processed together, so a batch of rows produces
// the same bits as the rows processed one at a time on the same backend.

#include <cstddef>
#include <optional>
#include <string_view>

namespace pvudf::simd {

enum class Backend { scalar, avx2 };

std::string_view backend_name(Backend backend);
std::optional<Backend> parse_backend(std::string_view name);

bool backend_available(Backend backend);

/// Backend used by the free functions below. Chosen on first use: the
/// PVUDF_KERNELS environment variable if set, else the widest available.
Backend active_backend();
void set_active_backend(Backend backend);

/// Row-major C[m x n] (+)= A[m x k] * B[k x n].
///
/// Each C(i, j) is accumulated as c = c + a(i, p) * b(p, j) for p = 0..k-1 in
/// order, starting from zero or from the existing value when `accumulate` is set.
void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
          const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate);

/// y[i] += alpha * x[i]
void axpy(std::size_t n, double alpha, const double* x, double* y);

/// sum_i x[i] * y[i]
double dot(std::size_t n, const double* x, const double* y);

/// y[i] += alpha[0] * x[0][i] + ... + alpha[7] * x[7][i], added to y in row order.
void axpy8(std::size_t n, const double* alpha, const double* const* x, double* y);

/// out[r] = sum_i x[r][i] * y[i] for r = 0..7.
void dot8(std::size_t n, const double* const* x, const double* y, double* out);

/// Backend-specific entry points, exposed for equivalence testing.
namespace scalar {
void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
          const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate);
void axpy(std::size_t n, double alpha, const double* x, double* y);
double dot(std::size_t n, const double* x, const double* y);
void axpy8(std::size_t n, const double* alpha, const double* const* x, double* y);
void dot8(std::size_t n, const double* const* x, const double* y, double* out);
}  // namespace scalar

namespace avx2 {
void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
          const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate);
void axpy(std::size_t n, double alpha, const double* x, double* y);
double dot(std::size_t n, const double* x, const double* y);
void axpy8(std::size_t n, const double* alpha, const double* const* x, double* y);
void dot8(std::size_t n, const double* const* x, const double* y, double* out);
}  // namespace avx2

/// RAII override of the active backend, restored on scope exit.
class ScopedBackend {
 public:
  explicit ScopedBackend(Backend backend) : previous_(active_backend()) {
    set_active_backend(backend);
  }
  ~ScopedBackend() { set_active_backend(previous_); }
  ScopedBackend(const ScopedBackend&) = delete;
  ScopedBackend& operator=(const ScopedBackend&) = delete;

 private:
  Backend previous_;
};

}  // namespace pvudf::simd
