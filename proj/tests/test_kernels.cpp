#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "prmbas/errors.hpp"
#include "prmbas/kernels.hpp"

using namespace prmbas;
using namespace prmbas::kernels;

namespace {

std::vector<double> random_vec(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

std::vector<Isa> available() {
  std::vector<Isa> out{Isa::scalar};
  for (Isa isa : {Isa::avx2, Isa::neon})
    if (isa_supported(isa)) out.push_back(isa);
  return out;
}

// Reassociation in the vector paths moves results by a few ulps of the
// magnitude sum.
void check_close(double got, long double want, long double magnitude) {
  CHECK(std::abs(static_cast<long double>(got) - want) <= 1e-13L * (magnitude + 1.0L));
}

}  // namespace

TEST_CASE("scalar table is always available") {
  CHECK(isa_supported(Isa::scalar));
  CHECK(table(Isa::scalar).dot != nullptr);
}

TEST_CASE("unsupported variants are refused") {
  for (Isa isa : {Isa::avx2, Isa::neon})
    if (!isa_supported(isa)) CHECK_THROWS_AS(set_isa(isa), UsageError);
}

TEST_CASE("every variant matches a long double reference") {
  std::mt19937_64 rng(7);
  for (Isa isa : available()) {
    CAPTURE(to_string(isa));
    const auto& k = table(isa);
    for (int n : {0, 1, 2, 3, 4, 5, 7, 8, 9, 15, 16, 17, 31, 64, 597}) {
      const auto a = random_vec(rng, n);
      const auto b = random_vec(rng, n);
      long double want = 0, mag = 0;
      for (int i = 0; i < n; ++i) {
        want += static_cast<long double>(a[i]) * b[i];
        mag += std::abs(static_cast<long double>(a[i]) * b[i]);
      }
      check_close(k.dot(a.data(), b.data(), n), want, mag);

      auto y = b;
      k.axpy(0.37, a.data(), y.data(), n);
      for (int i = 0; i < n; ++i) check_close(y[i], b[i] + 0.37L * a[i], std::abs(b[i]) + 1);
    }
    for (auto [rows, cols] : {std::pair{1, 1}, {3, 5}, {8, 4}, {7, 13}, {32, 597}, {1, 33}}) {
      const auto w = random_vec(rng, rows * cols);
      const auto x = random_vec(rng, cols);
      const auto bias = random_vec(rng, rows);
      std::vector<double> y(rows);
      k.gemv(w.data(), bias.data(), x.data(), y.data(), rows, cols);
      for (int r = 0; r < rows; ++r) {
        long double want = bias[r], mag = std::abs(bias[r]);
        for (int c = 0; c < cols; ++c) {
          want += static_cast<long double>(w[r * cols + c]) * x[c];
          mag += std::abs(static_cast<long double>(w[r * cols + c]) * x[c]);
        }
        check_close(y[r], want, mag);
      }

      const auto u = random_vec(rng, rows);
      auto acc = random_vec(rng, cols);
      const auto acc0 = acc;
      k.gemv_t_acc(w.data(), u.data(), acc.data(), rows, cols);
      for (int c = 0; c < cols; ++c) {
        long double want = acc0[c], mag = std::abs(acc0[c]);
        for (int r = 0; r < rows; ++r) {
          want += static_cast<long double>(w[r * cols + c]) * u[r];
          mag += std::abs(static_cast<long double>(w[r * cols + c]) * u[r]);
        }
        check_close(acc[c], want, mag);
      }

      auto w2 = w;
      k.ger(-0.5, u.data(), x.data(), w2.data(), rows, cols);
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
          check_close(w2[r * cols + c], w[r * cols + c] - 0.5L * u[r] * x[c],
                      std::abs(w[r * cols + c]) + 1);
    }
  }
}

TEST_CASE("vector variants agree with scalar") {
  std::mt19937_64 rng(11);
  const auto& s = table(Isa::scalar);
  for (Isa isa : available()) {
    if (isa == Isa::scalar) continue;
    const auto& v = table(isa);
    for (int trial = 0; trial < 200; ++trial) {
      const int rows = 1 + static_cast<int>(rng() % 40);
      const int cols = 1 + static_cast<int>(rng() % 70);
      const auto w = random_vec(rng, rows * cols);
      const auto x = random_vec(rng, cols);
      const auto bias = random_vec(rng, rows);
      std::vector<double> ys(rows), yv(rows);
      s.gemv(w.data(), bias.data(), x.data(), ys.data(), rows, cols);
      v.gemv(w.data(), bias.data(), x.data(), yv.data(), rows, cols);
      for (int r = 0; r < rows; ++r) CHECK(yv[r] == doctest::Approx(ys[r]).epsilon(1e-12));
      CHECK(v.dot(x.data(), x.data(), cols) ==
            doctest::Approx(s.dot(x.data(), x.data(), cols)).epsilon(1e-12));
    }
  }
}

TEST_CASE("set_isa switches the active table") {
  const Isa before = active_isa();
  set_isa(Isa::scalar);
  CHECK(active_isa() == Isa::scalar);
  CHECK(&active() == &table(Isa::scalar));
  set_isa(before);
  CHECK(active_isa() == before);
}

TEST_CASE("span wrappers check sizes") {
  std::vector<double> a(3), b(4), y(2), w(6);
  CHECK_THROWS_AS(dot(a, b), UsageError);
  CHECK_THROWS_AS(axpy(1.0, a, b), UsageError);
  CHECK_THROWS_AS(gemv(w, y, b, y), UsageError);
  CHECK_NOTHROW(gemv(w, y, a, y));
}
