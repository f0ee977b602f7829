#include "prmbas/kernels.hpp"

#if defined(__aarch64__)
#include <arm_neon.h>

namespace prmbas::kernels::detail {

namespace {

double dot_neon(const double* a, const double* b, int n) {
  float64x2_t acc0 = vdupq_n_f64(0.0);
  float64x2_t acc1 = vdupq_n_f64(0.0);
  int i = 0;
  for (; i + 4 <= n; i += 4) {
    acc0 = vfmaq_f64(acc0, vld1q_f64(a + i), vld1q_f64(b + i));
    acc1 = vfmaq_f64(acc1, vld1q_f64(a + i + 2), vld1q_f64(b + i + 2));
  }
  double s = vaddvq_f64(vaddq_f64(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_neon(double alpha, const double* x, double* y, int n) {
  const float64x2_t va = vdupq_n_f64(alpha);
  int i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), va, vld1q_f64(x + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void gemv_neon(const double* w, const double* bias, const double* x, double* y, int rows,
               int cols) {
  for (int r = 0; r < rows; ++r) y[r] = bias[r] + dot_neon(w + static_cast<long>(r) * cols, x, cols);
}

void gemv_t_acc_neon(const double* w, const double* x, double* y, int rows, int cols) {
  for (int r = 0; r < rows; ++r)
    if (x[r] != 0.0) axpy_neon(x[r], w + static_cast<long>(r) * cols, y, cols);
}

void ger_neon(double alpha, const double* u, const double* v, double* w, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    const double s = alpha * u[r];
    if (s != 0.0) axpy_neon(s, v, w + static_cast<long>(r) * cols, cols);
  }
}

}  // namespace

const KernelTable* neon_table() {
  static const KernelTable t{dot_neon, axpy_neon, gemv_neon, gemv_t_acc_neon, ger_neon};
  return &t;
}

}  // namespace prmbas::kernels::detail

#else

namespace prmbas::kernels::detail {
const KernelTable* neon_table() { return nullptr; }
}  // namespace prmbas::kernels::detail

#endif
