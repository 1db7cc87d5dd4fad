#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include <boost/random/normal_distribution.hpp>

namespace ordprior {

/// SplitMix64 finalizer. Used to derive statistically independent stream
/// seeds from structured keys (master seed, scenario, prior, replicate, ...).
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Folds a sequence of keys into one seed. Order matters.
constexpr std::uint64_t derive_seed(std::initializer_list<std::uint64_t> keys) noexcept {
  std::uint64_t h = 0x6A09E667F3BCC909ULL;
  for (std::uint64_t k : keys) {
    h = splitmix64(h ^ splitmix64(k));
  }
  return h;
}

/// Explicitly seeded generator with platform-independent output.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the
/// standard. Uniforms are built from the top 53 bits and normals come from
/// Boost's ziggurat implementation, so draws do not depend on the standard
/// library's distribution algorithms.
class Rng {
 public:
  using result_type = std::mt19937_64::result_type;

  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  static constexpr result_type min() { return std::mt19937_64::min(); }
  static constexpr result_type max() { return std::mt19937_64::max(); }
  result_type operator()() { return engine_(); }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() { return normal_(engine_); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // reject the partial final block so every residue is equally likely
    const std::uint64_t limit = max() - max() % n;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % n;
  }

 private:
  std::mt19937_64 engine_;
  boost::random::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace ordprior
