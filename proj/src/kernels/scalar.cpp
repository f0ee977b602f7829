#include "prmbas/kernels.hpp"

namespace prmbas::kernels::detail {

namespace {

double dot_scalar(const double* a, const double* b, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_scalar(double alpha, const double* x, double* y, int n) {
  for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void gemv_scalar(const double* w, const double* bias, const double* x, double* y, int rows,
                 int cols) {
  for (int r = 0; r < rows; ++r) y[r] = bias[r] + dot_scalar(w + static_cast<long>(r) * cols, x, cols);
}

void gemv_t_acc_scalar(const double* w, const double* x, double* y, int rows, int cols) {
  for (int r = 0; r < rows; ++r) axpy_scalar(x[r], w + static_cast<long>(r) * cols, y, cols);
}

void ger_scalar(double alpha, const double* u, const double* v, double* w, int rows, int cols) {
  for (int r = 0; r < rows; ++r) axpy_scalar(alpha * u[r], v, w + static_cast<long>(r) * cols, cols);
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable t{dot_scalar, axpy_scalar, gemv_scalar, gemv_t_acc_scalar, ger_scalar};
  return t;
}

}  // namespace prmbas::kernels::detail
