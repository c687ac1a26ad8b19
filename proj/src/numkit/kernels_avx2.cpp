// Compiled with -mavx2 -mfma on x86-64; only entered after a CPUID check.
#include "moelo/numkit/kernels.hpp"

#if defined(MOELO_HAVE_AVX2)
#include <immintrin.h>

namespace moelo::numkit::kernels {
namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

double dot_avx2(const double* x, const double* y, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d a = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(a, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

// 4x8 register tile: four rows of C held in eight ymm accumulators while
// streaming k. Remainders fall back to row-wise axpy.
void gemm_nn_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                  const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  std::size_t i = 0;
  const std::size_t n8 = n - n % 8;
  for (; i + 4 <= m; i += 4) {
    const double* a0 = a + (i + 0) * lda;
    const double* a1 = a + (i + 1) * lda;
    const double* a2 = a + (i + 2) * lda;
    const double* a3 = a + (i + 3) * lda;
    double* c0 = c + (i + 0) * ldc;
    double* c1 = c + (i + 1) * ldc;
    double* c2 = c + (i + 2) * ldc;
    double* c3 = c + (i + 3) * ldc;
    for (std::size_t j = 0; j < n8; j += 8) {
      __m256d r00 = _mm256_loadu_pd(c0 + j), r01 = _mm256_loadu_pd(c0 + j + 4);
      __m256d r10 = _mm256_loadu_pd(c1 + j), r11 = _mm256_loadu_pd(c1 + j + 4);
      __m256d r20 = _mm256_loadu_pd(c2 + j), r21 = _mm256_loadu_pd(c2 + j + 4);
      __m256d r30 = _mm256_loadu_pd(c3 + j), r31 = _mm256_loadu_pd(c3 + j + 4);
      for (std::size_t p = 0; p < k; ++p) {
        const double* bp = b + p * ldb + j;
        const __m256d b0 = _mm256_loadu_pd(bp);
        const __m256d b1 = _mm256_loadu_pd(bp + 4);
        __m256d s = _mm256_broadcast_sd(a0 + p);
        r00 = _mm256_fmadd_pd(s, b0, r00);
        r01 = _mm256_fmadd_pd(s, b1, r01);
        s = _mm256_broadcast_sd(a1 + p);
        r10 = _mm256_fmadd_pd(s, b0, r10);
        r11 = _mm256_fmadd_pd(s, b1, r11);
        s = _mm256_broadcast_sd(a2 + p);
        r20 = _mm256_fmadd_pd(s, b0, r20);
        r21 = _mm256_fmadd_pd(s, b1, r21);
        s = _mm256_broadcast_sd(a3 + p);
        r30 = _mm256_fmadd_pd(s, b0, r30);
        r31 = _mm256_fmadd_pd(s, b1, r31);
      }
      _mm256_storeu_pd(c0 + j, r00), _mm256_storeu_pd(c0 + j + 4, r01);
      _mm256_storeu_pd(c1 + j, r10), _mm256_storeu_pd(c1 + j + 4, r11);
      _mm256_storeu_pd(c2 + j, r20), _mm256_storeu_pd(c2 + j + 4, r21);
      _mm256_storeu_pd(c3 + j, r30), _mm256_storeu_pd(c3 + j + 4, r31);
    }
    if (n8 < n) {
      for (std::size_t r = 0; r < 4; ++r) {
        const double* ar = a + (i + r) * lda;
        double* cr = c + (i + r) * ldc;
        for (std::size_t p = 0; p < k; ++p) {
          const double* bp = b + p * ldb;
          for (std::size_t j = n8; j < n; ++j) cr[j] += ar[p] * bp[j];
        }
      }
    }
  }
  for (; i < m; ++i) {
    const double* ai = a + i * lda;
    double* ci = c + i * ldc;
    for (std::size_t p = 0; p < k; ++p) axpy_avx2(ai[p], b + p * ldb, ci, n);
  }
}

}  // namespace

const KernelTable* avx2_table() noexcept {
  static const KernelTable table{"avx2", dot_avx2, axpy_avx2, gemm_nn_avx2};
  static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return supported ? &table : nullptr;
}

}  // namespace moelo::numkit::kernels

#else

namespace moelo::numkit::kernels {
const KernelTable* avx2_table() noexcept { return nullptr; }
}  // namespace moelo::numkit::kernels

#endif
