#pragma once

#include <cstdint>
#include <random>

#include "mtvit/mat.hpp"

namespace mtvit {

// All randomness in the project flows through mt19937_64 engines derived from
// a master seed via splitmix-style mixing, so any sub-stream (epoch, fold,
// worker) is reproducible from (seed, tag) alone.
inline uint64_t mix_seed(uint64_t seed, uint64_t tag) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

using Rng = std::mt19937_64;

inline Rng make_rng(uint64_t seed, uint64_t tag = 0) { return Rng(mix_seed(seed, tag)); }

template <typename T>
void fill_normal(Mat<T>& m, Rng& rng, T stddev) {
  std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
  for (auto& x : m.data) x = static_cast<T>(dist(rng));
}

template <typename T>
void fill_uniform(Mat<T>& m, Rng& rng, T lo, T hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& x : m.data) x = static_cast<T>(dist(rng));
}

// Beta(a, b) via two gamma draws.
inline double sample_beta(Rng& rng, double a, double b) {
  std::gamma_distribution<double> ga(a, 1.0), gb(b, 1.0);
  const double x = ga(rng);
  const double y = gb(rng);
  return x / (x + y);
}

}  // namespace mtvit
