#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>

namespace seqsleep {

// Counter-based generator built on the SplitMix64 finalizer.
//
// The i-th 64-bit draw (i = 0, 1, ...) of a stream with key `seed` is
//
//   mix64(seed + (i + 1) * 0x9E3779B97F4A7C15)
//
// where mix64(z) = z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
//                  z ^= z >> 27; z *= 0x94D049BB133111EB; z ^= z >> 31.
//
// Derived draws:
//   uniform()        = (next_u64() >> 11) * 2^-53, in [0, 1)
//   below(n)         = floor(uniform() * n)
//   normal()         = Box-Muller on two uniforms: sqrt(-2 ln(1 - u1)) * cos(2 pi u2)
//   shuffle(v)       = Fisher-Yates from the back, j = below(i + 1)
//   fork(tag)        = new stream keyed by mix64(seed ^ mix64(tag + 1))
//
// Every draw is a pure function of (seed, counter), so streams reproduce
// exactly across platforms and implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {}

  static std::uint64_t mix64(std::uint64_t z);

  std::uint64_t next_u64();
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t below(std::size_t n);
  double normal();

  template <typename T>
  void shuffle(std::span<T> values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      std::size_t j = below(i);
      std::swap(values[i - 1], values[j]);
    }
  }

  [[nodiscard]] Rng fork(std::uint64_t tag) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

}  // namespace seqsleep
