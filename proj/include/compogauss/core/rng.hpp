#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace cg {

// Seeded generator with explicit uniform/normal transforms so that a fixed
// seed yields the same stream on any standard library.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed), seed_(seed) {}

  uint64_t raw() { return eng_(); }

  // [0, 1) with 53 random bits
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  int64_t uniform_int(int64_t n) {
    // modulo bias negligible for n << 2^64
    return static_cast<int64_t>(eng_() % static_cast<uint64_t>(n));
  }

  // Box-Muller; generates pairs, caches the second value.
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * 3.14159265358979323846 * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
  }

  // Independent substream derived from this generator's seed and a stream id.
  Rng fork(uint64_t stream) const {
    uint64_t h = (seed_ * 0xff51afd7ed558ccdULL) ^ (0x9e3779b97f4a7c15ULL + stream);
    h ^= h >> 30;
    h *= 0xbf58476d1ce4e5b9ULL;
    h ^= h >> 27;
    h *= 0x94d049bb133111ebULL;
    h ^= h >> 31;
    return Rng(h);
  }

 private:
  std::mt19937_64 eng_;
  uint64_t seed_ = 0;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace cg
