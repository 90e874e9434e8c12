#pragma once

// Counter-based random streams.
//
// Every stochastic step draws from a `Stream` identified by a key derived from
// the user seed and a path of integer tags, e.g. (seed, pass, round) or
// (seed, i, j). Draw n of a stream is splitmix64_mix(key + (n + 1) * gamma),
// so the value depends only on (seed, tags, n): never on thread count or on the
// order in which unrelated streams are consumed.
//
// Tag conventions used across the library are listed in `StreamTag`.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>

namespace rfmap {

enum class StreamTag : std::uint64_t {
  first_pass = 1,     // (seed, first_pass, column)
  second_pass = 2,    // (seed, second_pass, round)
  measurement = 3,    // (seed, measurement, i, j)
  noise = 4,          // (seed, noise, i, j)
  uniform_tubes = 5,  // (seed, uniform_tubes)
  queries = 6,        // (seed, queries, ...)
  experiment = 7,     // (seed, experiment, replicate, ...)
};

inline constexpr std::uint64_t splitmix64_mix(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t kGoldenGamma = 0x9e3779b97f4a7c15ULL;

/// Folds a list of tags into a stream key.
inline constexpr std::uint64_t derive_key(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) noexcept {
  std::uint64_t key = splitmix64_mix(seed + kGoldenGamma);
  for (auto t : tags) key = splitmix64_mix(key ^ splitmix64_mix(t + kGoldenGamma));
  return key;
}

/// SplitMix64 stream; satisfies UniformRandomBitGenerator so it composes with
/// <random> distributions.
class Stream {
 public:
  using result_type = std::uint64_t;

  explicit constexpr Stream(std::uint64_t key) noexcept : key_(key) {}
  Stream(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) noexcept
      : key_(derive_key(seed, tags)) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  constexpr result_type operator()() noexcept {
    ++counter_;
    return splitmix64_mix(key_ + counter_ * kGoldenGamma);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept {
    // Lemire's multiply-shift with rejection.
    std::uint64_t x = (*this)();
    __uint128_t m = static_cast<__uint128_t>(x) * n;
    auto low = static_cast<std::uint64_t>(m);
    if (low < n) {
      const std::uint64_t threshold = (0 - n) % n;
      while (low < threshold) {
        x = (*this)();
        m = static_cast<__uint128_t>(x) * n;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  /// Standard normal draw (Box-Muller, both halves used).
  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * 3.14159265358979323846 * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline constexpr std::uint64_t tag(StreamTag t) noexcept { return static_cast<std::uint64_t>(t); }

}  // namespace rfmap
