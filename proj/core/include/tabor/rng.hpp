#pragma once

#include <cstdint>
#include <vector>

#include "tabor/common.hpp"

namespace tabor {

// Deterministic splitmix64 generator.  Every random decision in the library
// flows through one of these so that a (seed, stream) pair fully pins run
// output on any platform; std::mt19937 distributions are not portable across
// standard library implementations, which is why we roll the little that we
// need by hand.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 random bits.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Uniform in [0, n) without modulo bias (Lemire's multiply-shift; the tiny
  // residual bias of the plain variant is irrelevant at our range sizes but
  // the full-width multiply is just as cheap).
  uint64_t below(uint64_t n) {
    return static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
  }

  // Inclusive on both ends.
  int uniform_int(int lo, int hi) {
    require(lo <= hi, "Rng::uniform_int: empty range");
    return lo + static_cast<int>(below(static_cast<uint64_t>(hi - lo) + 1));
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct values out of [0, n), order randomized (partial Fisher-Yates).
  std::vector<int> sample(int n, int k) {
    require(k >= 0 && k <= n, "Rng::sample: k out of range");
    std::vector<int> pool(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) pool[static_cast<size_t>(i)] = i;
    for (int i = 0; i < k; ++i) {
      int j = i + static_cast<int>(below(static_cast<uint64_t>(n - i)));
      std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
    }
    pool.resize(static_cast<size_t>(k));
    return pool;
  }

 private:
  uint64_t state_;
};

// Stable per-purpose seed derivation, so e.g. the per-class solver streams do
// not collide with the batch sampler no matter what the user seed is.
inline uint64_t derive_seed(uint64_t seed, uint64_t stream) {
  Rng r(seed ^ (0x632be59bd9b4e019ull + stream * 0x9e3779b97f4a7c15ull));
  r.next_u64();
  return r.next_u64();
}

}  // namespace tabor
