#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <span>
#include <utility>

namespace expertnet {

// Random source used everywhere in the library.
//
// Generator: SplitMix64 (Steele, Lea, Flood 2014). State is a 64-bit counter
// advanced by the golden-ratio increment; output is the standard
// 0xbf58476d1ce4e5b9 / 0x94d049bb133111eb finalizer. Independent streams are
// obtained with derive_seed(), which folds tags into a master seed through
// the same finalizer. Everything below is fully specified (no
// implementation-defined std:: distributions) so other implementations can
// reproduce a stream from the algorithm description alone.

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Folds tags into a seed: s <- mix64(s ^ mix64(tag + golden)) per tag.
constexpr std::uint64_t derive_seed(std::uint64_t master,
                                    std::initializer_list<std::uint64_t> tags) noexcept {
  std::uint64_t s = mix64(master);
  for (std::uint64_t tag : tags) s = mix64(s ^ mix64(tag + 0x9e3779b97f4a7c15ULL));
  return s;
}

/// Stable 64-bit tag for a real-valued grid coordinate (e.g. a noise ratio).
inline std::uint64_t real_tag(double value) noexcept {
  // Quantize so 0.3 parsed from text and 0.3 computed as 3/10 agree.
  return static_cast<std::uint64_t>(std::llround(value * 1e9));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) noexcept : state_(seed) {}

  std::uint64_t next() noexcept {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix64(state_);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, bound) by rejection, bound > 0.
  std::uint64_t below(std::uint64_t bound) noexcept {
    const std::uint64_t limit = bound * (UINT64_MAX / bound);
    std::uint64_t x;
    do {
      x = next();
    } while (x >= limit);
    return x % bound;
  }

  /// Standard normal via Box-Muller (cosine branch only; one draw per call).
  double normal() noexcept {
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Fisher-Yates, last index first.
  template <typename T>
  void shuffle(std::span<T> items) noexcept {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  std::uint64_t state() const noexcept { return state_; }

 private:
  std::uint64_t state_;
};

}  // namespace expertnet
