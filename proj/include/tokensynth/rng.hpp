#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace tokensynth {

// Deterministic, platform-independent RNG (splitmix64 core). All randomness
// in the project flows through this so that seeded runs are reproducible
// byte-for-byte; std:: distributions are implementation-defined and never used.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Standard normal via Box-Muller; consumes exactly two draws per call so the
  // state stays a single word (no cached spare).
  double normal() {
    double u1 = uniform01();
    double u2 = uniform01();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  // Uniform integer in [0, n). Multiply-shift; bias is below 2^-53 for any n
  // this project uses.
  long uniform_int(long n) {
    return static_cast<long>(static_cast<double>(n) * uniform01());
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (long i = static_cast<long>(v.size()) - 1; i > 0; --i) {
      long j = uniform_int(i + 1);
      std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
    }
  }

  std::uint64_t state() const { return state_; }
  void set_state(std::uint64_t s) { state_ = s; }

 private:
  std::uint64_t state_;
};

}  // namespace tokensynth
