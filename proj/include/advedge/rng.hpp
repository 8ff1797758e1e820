#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace advedge {

// splitmix64 step; used to derive independent stream seeds (e.g. one per image).
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint32_t derive_seed(std::uint32_t base, std::uint64_t stream) {
  return static_cast<std::uint32_t>(mix64((static_cast<std::uint64_t>(base) << 32) ^ stream));
}

/// mt19937 wrapped with explicit draw helpers so generated sequences do not
/// depend on the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint32_t seed) : gen_(seed) {}

  std::uint32_t u32() { return gen_(); }

  /// Uniform in [0, 1).
  float uniform() { return static_cast<float>(u32() >> 8) * (1.0f / 16777216.0f); }

  float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Rejection sampling keeps the draw unbiased.
  std::uint32_t below(std::uint32_t n) {
    const std::uint32_t limit = UINT32_MAX - UINT32_MAX % n;
    std::uint32_t v = u32();
    while (v >= limit) v = u32();
    return v % n;
  }

  bool bernoulli(float p) { return uniform() < p; }

  /// Standard normal via Box-Muller.
  float normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    float u1 = uniform();
    while (u1 <= 1e-12f) u1 = uniform();
    const float r = std::sqrt(-2.0f * std::log(u1));
    const float t = 6.28318530717958647692f * uniform();
    spare_ = r * std::sin(t);
    have_spare_ = true;
    return r * std::cos(t);
  }

 private:
  std::mt19937 gen_;
  float spare_ = 0.0f;
  bool have_spare_ = false;
};

}  // namespace advedge
