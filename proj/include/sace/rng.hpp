#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace sace {

// Deterministic sampling layer. The transforms are fixed here instead of
// using std::*_distribution because those are implementation-defined and
// would break the byte-identical-output contract across standard libraries.
// Per-replicate streams are derived with splitmix64(base + counter).
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

  // Uniform in [0,1) from the high 53 bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller (pairs cached).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  double half_normal() { return std::abs(normal()); }

  int bernoulli(double p) { return uniform() < p ? 1 : 0; }

  // Index into probs by inverse CDF; probs need not be exactly normalized,
  // the last category absorbs rounding slack.
  int categorical(const std::vector<double>& probs) {
    double u = uniform(), acc = 0.0;
    for (std::size_t k = 0; k + 1 < probs.size(); ++k) {
      acc += probs[k];
      if (u < acc) return static_cast<int>(k);
    }
    return static_cast<int>(probs.size()) - 1;
  }

  // Uniform integer in [0, m): rejection-free scaling is fine here since m
  // is tiny relative to 2^53 (used for bootstrap resampling).
  int below(int m) { return static_cast<int>(uniform() * m); }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace sace
