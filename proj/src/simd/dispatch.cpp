#include "pvudf/simd/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace pvudf::simd {
namespace {

Backend detect_default() {
  if (const char* forced = std::getenv("PVUDF_KERNELS")) {
    if (auto parsed = parse_backend(forced); parsed && backend_available(*parsed)) return *parsed;
  }
  return backend_available(Backend::avx2) ? Backend::avx2 : Backend::scalar;
}

std::atomic<Backend>& active() {
  static std::atomic<Backend> backend{detect_default()};
  return backend;
}

}  // namespace

std::string_view backend_name(Backend backend) {
  switch (backend) {
    case Backend::scalar: return "scalar";
    case Backend::avx2: return "avx2";
  }
  return "unknown";
}

std::optional<Backend> parse_backend(std::string_view name) {
  if (name == "scalar") return Backend::scalar;
  if (name == "avx2") return Backend::avx2;
  return std::nullopt;
}

bool backend_available(Backend backend) {
  switch (backend) {
    case Backend::scalar: return true;
    case Backend::avx2:
#if defined(__x86_64__) || defined(__i386__)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

Backend active_backend() { return active().load(std::memory_order_relaxed); }

void set_active_backend(Backend backend) {
  if (!backend_available(backend)) {
    throw std::runtime_error("kernel backend '" + std::string(backend_name(backend)) +
                             "' is not supported on this CPU");
  }
  active().store(backend, std::memory_order_relaxed);
}

void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
          const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  if (active_backend() == Backend::avx2) {
    avx2::gemm(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
  } else {
    scalar::gemm(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
  }
}

void axpy(std::size_t n, double alpha, const double* x, double* y) {
  if (active_backend() == Backend::avx2) {
    avx2::axpy(n, alpha, x, y);
  } else {
    scalar::axpy(n, alpha, x, y);
  }
}

double dot(std::size_t n, const double* x, const double* y) {
  return active_backend() == Backend::avx2 ? avx2::dot(n, x, y) : scalar::dot(n, x, y);
}

void axpy8(std::size_t n, const double* alpha, const double* const* x, double* y) {
  if (active_backend() == Backend::avx2) {
    avx2::axpy8(n, alpha, x, y);
  } else {
    scalar::axpy8(n, alpha, x, y);
  }
}

void dot8(std::size_t n, const double* const* x, const double* y, double* out) {
  if (active_backend() == Backend::avx2) {
    avx2::dot8(n, x, y, out);
  } else {
    scalar::dot8(n, x, y, out);
  }
}

}  // namespace pvudf::simd
