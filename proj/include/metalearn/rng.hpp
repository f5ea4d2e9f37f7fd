#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "metalearn/common.hpp"

namespace metalearn {

/// splitmix64 finalizer; the basis of all seed derivation in the library.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Stable combination of a base seed with a stream/index tag. This is the
/// documented seeding scheme: task i of a dataset seeded s draws from
/// hash64(s, i), worker w of a vector env from hash64(base, w), and so on.
inline std::uint64_t hash64(std::uint64_t seed, std::uint64_t tag) {
  return splitmix64(splitmix64(seed) ^ (tag + 0x9E3779B97F4A7C15ull));
}

/// Deterministic random source. Wraps std::mt19937_64 (whose sequence is
/// pinned by the standard) and implements every distribution in-library so
/// that draws are reproducible independent of the C++ runtime.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::uint64_t uniform_below(std::uint64_t n) {
    if (n == 0) throw ConfigError("Rng::uniform_below: n must be positive");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  /// Uniform real in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (deterministic, stateless pairs).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// k distinct picks from [0, n), uniform over ordered k-subsets.
  std::vector<Index> sample_without_replacement(Index n, Index k) {
    std::vector<Index> pool(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
    std::vector<Index> picks;
    picks.reserve(static_cast<std::size_t>(k));
    for (Index i = 0; i < k; ++i) {
      const auto j = static_cast<Index>(i + static_cast<Index>(uniform_below(
                                                static_cast<std::uint64_t>(n - i))));
      std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
      picks.push_back(pool[static_cast<std::size_t>(i)]);
    }
    return picks;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace metalearn
