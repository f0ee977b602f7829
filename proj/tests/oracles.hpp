#pragma once

// Reference computations shared by the unit tests and the acceptance suite.

#include <cmath>
#include <random>
#include <vector>

#include "prmbas/prmtrain.hpp"
#include "prmbas/seed.hpp"

namespace prmbas::testing {

// Independent long double evaluation of the objective, written from the loss
// definitions: tanh MLP, sigmoid output, BCE value term, pairwise rank term.
inline long double reference_loss(const ScorerModel& model, const std::vector<double>& weights,
                                  const std::vector<FeatureGroup>& batch, double lambda,
                                  double delta) {
  const auto widths = model.layer_widths();
  auto forward = [&](const std::vector<double>& x) {
    std::vector<long double> a(x.begin(), x.end());
    std::size_t off = 0;
    for (std::size_t l = 1; l < widths.size(); ++l) {
      const int rows = widths[l], cols = widths[l - 1];
      std::vector<long double> z(rows);
      for (int r = 0; r < rows; ++r) {
        long double s = weights[off + static_cast<std::size_t>(rows) * cols + r];
        for (int c = 0; c < cols; ++c) s += weights[off + static_cast<std::size_t>(r) * cols + c] * a[c];
        z[r] = l + 1 < widths.size() ? std::tanh(s) : s;
      }
      off += static_cast<std::size_t>(rows) * cols + rows;
      a = std::move(z);
    }
    return 1.0L / (1.0L + std::exp(-a[0]));
  };
  long double value = 0, rank = 0;
  bool any = false;
  for (const auto& g : batch) {
    std::vector<long double> p;
    for (const auto& f : g.features) p.push_back(forward(f));
    long double v = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const long double r = g.targets[i];
      v -= r * std::log(p[i]) + (1 - r) * std::log(1 - p[i]);
    }
    value += v / p.size();
    long double rs = 0;
    int count = 0;
    for (std::size_t m = 0; m < p.size(); ++m)
      for (std::size_t n = 0; n < p.size(); ++n)
        if (g.targets[m] - g.targets[n] > delta) {
          rs += std::log1p(std::exp(-(p[m] - p[n])));
          ++count;
        }
    if (count) {
      any = true;
      rank += rs / count;
    }
  }
  value /= batch.size();
  rank = any ? rank / batch.size() : 0;
  return value + lambda * rank;
}

inline std::vector<FeatureGroup> random_batch(std::mt19937_64& rng, int dim) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<FeatureGroup> batch(1 + uniform_index(rng, 4));
  for (auto& g : batch) {
    const int m = 1 + static_cast<int>(uniform_index(rng, 5));
    for (int i = 0; i < m; ++i) {
      std::vector<double> f(dim);
      for (auto& x : f) x = u(rng);
      g.features.push_back(f);
      g.targets.push_back(static_cast<double>(uniform_index(rng, 9)) / 8.0);
    }
  }
  return batch;
}

}  // namespace prmbas::testing
