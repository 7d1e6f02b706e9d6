#pragma once

#include <cmath>
#include <cstdint>
#include <string>

namespace mlip {

// Deterministic counter-based generator: SplitMix64 run in counter mode.
// Every draw is mix(seed + k * golden) for an incrementing counter k, so a
// stream is fully determined by its 64-bit seed and is cheap to fork.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), counter_(0) {}

  uint64_t next_u64() {
    uint64_t z = seed_ + (++counter_) * 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // integer in [0, n)
  int uniform_int(int n) { return static_cast<int>(next_u64() % static_cast<uint64_t>(n)); }

  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // normal truncated to +/- 2 std
  double trunc_normal(double std_dev) {
    double z = normal();
    while (std::fabs(z) > 2.0) z = normal();
    return z * std_dev;
  }

  template <typename T>
  void shuffle(T& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = next_u64() % i;
      std::swap(v[i - 1], v[j]);
    }
  }

  // derived stream for a named purpose (data, init, batches, ...)
  Rng fork(const std::string& tag) const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (char c : tag) {
      h ^= static_cast<uint64_t>(static_cast<unsigned char>(c));
      h *= 0x100000001b3ull;
    }
    return Rng(seed_ ^ h);
  }

 private:
  uint64_t seed_;
  uint64_t counter_;
};

}  // namespace mlip
