#pragma once

// Dense double-precision kernels behind the scorer MLP. Each kernel has a
// scalar reference and vector variants (AVX2+FMA on x86-64, NEON on AArch64);
// the variant is picked once at startup from CPU features and can be pinned
// with set_isa() or the PRMBAS_KERNELS environment variable
// ("scalar", "avx2", "neon").
//
// Matrices are row-major, `rows x cols`.

#include <span>
#include <string_view>

namespace prmbas::kernels {

enum class Isa { scalar, avx2, neon };

std::string_view to_string(Isa isa);

struct KernelTable {
  double (*dot)(const double* a, const double* b, int n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, int n);
  // y = W x + bias
  void (*gemv)(const double* w, const double* bias, const double* x, double* y, int rows,
               int cols);
  // y += W^T x
  void (*gemv_t_acc)(const double* w, const double* x, double* y, int rows, int cols);
  // W += alpha * u v^T
  void (*ger)(double alpha, const double* u, const double* v, double* w, int rows, int cols);
};

bool isa_supported(Isa isa);
Isa active_isa();
/// Throws UsageError if the CPU lacks the requested extension.
void set_isa(Isa isa);
const KernelTable& table(Isa isa);
const KernelTable& active();

double dot(std::span<const double> a, std::span<const double> b);
void axpy(double alpha, std::span<const double> x, std::span<double> y);
void gemv(std::span<const double> w, std::span<const double> bias, std::span<const double> x,
          std::span<double> y);
void gemv_t_acc(std::span<const double> w, std::span<const double> x, std::span<double> y);
void ger(double alpha, std::span<const double> u, std::span<const double> v,
         std::span<double> w);

namespace detail {
const KernelTable& scalar_table();
const KernelTable* avx2_table();  // nullptr when not compiled in
const KernelTable* neon_table();
}  // namespace detail

}  // namespace prmbas::kernels
