// Built with -mavx2 -mfma; only reached after a runtime CPU check.
#include "prmbas/kernels.hpp"

#if defined(__x86_64__) && defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>

namespace prmbas::kernels::detail {

namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d shuf = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, shuf));
}

double dot_avx2(const double* a, const double* b, int n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  int i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4)
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_avx2(double alpha, const double* x, double* y, int n) {
  const __m256d va = _mm256_set1_pd(alpha);
  int i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void gemv_avx2(const double* w, const double* bias, const double* x, double* y, int rows,
               int cols) {
  for (int r = 0; r < rows; ++r) y[r] = bias[r] + dot_avx2(w + static_cast<long>(r) * cols, x, cols);
}

void gemv_t_acc_avx2(const double* w, const double* x, double* y, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    if (x[r] == 0.0) continue;
    axpy_avx2(x[r], w + static_cast<long>(r) * cols, y, cols);
  }
}

void ger_avx2(double alpha, const double* u, const double* v, double* w, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    const double s = alpha * u[r];
    if (s == 0.0) continue;
    axpy_avx2(s, v, w + static_cast<long>(r) * cols, cols);
  }
}

}  // namespace

const KernelTable* avx2_table() {
  static const KernelTable t{dot_avx2, axpy_avx2, gemv_avx2, gemv_t_acc_avx2, ger_avx2};
  return &t;
}

}  // namespace prmbas::kernels::detail

#else

namespace prmbas::kernels::detail {
const KernelTable* avx2_table() { return nullptr; }
}  // namespace prmbas::kernels::detail

#endif
