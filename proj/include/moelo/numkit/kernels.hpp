#pragma once

// Inner-loop arithmetic for the dense layers. Every kernel has a portable
// scalar reference; vector variants (AVX2+FMA on x86-64, NEON on AArch64) are
// selected once at runtime and must agree with the reference to rounding.
//
// Set MOELO_SIMD=scalar in the environment to force the reference path.

#include <cstddef>
#include <string_view>

namespace moelo::numkit::kernels {

struct KernelTable {
  std::string_view name;
  // sum_i x[i] * y[i]
  double (*dot)(const double* x, const double* y, std::size_t n);
  // y[i] += alpha * x[i]
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // C[m x n] += A[m x k] * B[k x n], all row-major with the given leading dims.
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                  const double* b, std::size_t ldb, double* c, std::size_t ldc);
};

const KernelTable& scalar_table() noexcept;
// nullptr when the variant is not compiled in or the CPU lacks the feature.
const KernelTable* avx2_table() noexcept;
const KernelTable* neon_table() noexcept;

// The table chosen for this process (first call decides).
const KernelTable& active() noexcept;

inline double dot(const double* x, const double* y, std::size_t n) { return active().dot(x, y, n); }
inline void axpy(double alpha, const double* x, double* y, std::size_t n) { active().axpy(alpha, x, y, n); }
inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                    const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  active().gemm_nn(m, n, k, a, lda, b, ldb, c, ldc);
}

}  // namespace moelo::numkit::kernels
