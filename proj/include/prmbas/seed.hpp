#pragma once

#include <cstdint>
#include <random>

namespace prmbas {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Child seed for candidate `candidate` at step `step` under `parent`.
/// Every random stream in the engine is derived through this function, so a
/// candidate's content depends only on its own lineage and never on
/// scheduling or on how many siblings were requested.
constexpr std::uint64_t hash64(std::uint64_t parent, std::uint64_t step,
                               std::uint64_t candidate) noexcept {
  std::uint64_t h = splitmix64(parent ^ 0x5bd1e9955bd1e995ULL);
  h = splitmix64(h ^ (step + 0x632be59bd9b4e019ULL));
  h = splitmix64(h ^ (candidate + 0x8cb92ba72f3d8dd7ULL));
  return h;
}

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform integer in [0, n). The modulo bias is below 2^-40 for every n used here.
inline std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n) {
  return rng() % n;
}

}  // namespace prmbas
