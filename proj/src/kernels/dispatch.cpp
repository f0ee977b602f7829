#include <atomic>
#include <cstdlib>
#include <string>

#include "prmbas/errors.hpp"
#include "prmbas/kernels.hpp"

namespace prmbas::kernels {

namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa parse_isa(std::string_view name) {
  if (name == "scalar") return Isa::scalar;
  if (name == "avx2") return Isa::avx2;
  if (name == "neon") return Isa::neon;
  throw UsageError("unknown kernel ISA: " + std::string(name));
}

Isa best_isa() {
  if (const char* env = std::getenv("PRMBAS_KERNELS"); env && *env) {
    const Isa forced = parse_isa(env);
    if (isa_supported(forced)) return forced;
  }
  if (isa_supported(Isa::avx2)) return Isa::avx2;
  if (isa_supported(Isa::neon)) return Isa::neon;
  return Isa::scalar;
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{best_isa()};
  return isa;
}

void check_matrix(std::size_t w, std::size_t rows, std::size_t cols) {
  if (w != rows * cols) throw UsageError("matrix size does not match rows x cols");
}

}  // namespace

std::string_view to_string(Isa isa) {
  switch (isa) {
    case Isa::scalar: return "scalar";
    case Isa::avx2: return "avx2";
    case Isa::neon: return "neon";
  }
  return "?";
}

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::scalar: return true;
    case Isa::avx2: return detail::avx2_table() != nullptr && cpu_has_avx2();
    case Isa::neon: return detail::neon_table() != nullptr;
  }
  return false;
}

Isa active_isa() { return current().load(std::memory_order_relaxed); }

void set_isa(Isa isa) {
  if (!isa_supported(isa)) throw UsageError("kernel ISA not supported here: " + std::string(to_string(isa)));
  current().store(isa, std::memory_order_relaxed);
}

const KernelTable& table(Isa isa) {
  if (!isa_supported(isa)) throw UsageError("kernel ISA not supported here: " + std::string(to_string(isa)));
  switch (isa) {
    case Isa::avx2: return *detail::avx2_table();
    case Isa::neon: return *detail::neon_table();
    case Isa::scalar: break;
  }
  return detail::scalar_table();
}

const KernelTable& active() { return table(active_isa()); }

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw UsageError("dot: length mismatch");
  return active().dot(a.data(), b.data(), static_cast<int>(a.size()));
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw UsageError("axpy: length mismatch");
  active().axpy(alpha, x.data(), y.data(), static_cast<int>(x.size()));
}

void gemv(std::span<const double> w, std::span<const double> bias, std::span<const double> x,
          std::span<double> y) {
  check_matrix(w.size(), y.size(), x.size());
  if (bias.size() != y.size()) throw UsageError("gemv: bias length mismatch");
  active().gemv(w.data(), bias.data(), x.data(), y.data(), static_cast<int>(y.size()),
                static_cast<int>(x.size()));
}

void gemv_t_acc(std::span<const double> w, std::span<const double> x, std::span<double> y) {
  check_matrix(w.size(), x.size(), y.size());
  active().gemv_t_acc(w.data(), x.data(), y.data(), static_cast<int>(x.size()),
                      static_cast<int>(y.size()));
}

void ger(double alpha, std::span<const double> u, std::span<const double> v,
         std::span<double> w) {
  check_matrix(w.size(), u.size(), v.size());
  active().ger(alpha, u.data(), v.data(), w.data(), static_cast<int>(u.size()),
               static_cast<int>(v.size()));
}

}  // namespace prmbas::kernels
