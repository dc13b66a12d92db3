#pragma once

// Deterministic, splittable RNG. splitmix64 core with fork-by-label so that
// (seed, purpose) pairs give independent streams regardless of how much the
// parent stream has been consumed. Gaussian draws use our own Box-Muller
// rather than std::normal_distribution, whose output differs across standard
// library implementations; runs must be byte-reproducible across platforms.

#include <cstdint>
#include <string_view>
#include <vector>

#include "t2diff/tensor.hpp"

namespace t2diff {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : s) {
    h ^= (std::uint8_t)c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace detail

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), state_(seed) {
    // burn one splitmix step so seed 0 does not start at state 0
    (void)detail::splitmix64(state_);
  }

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return detail::splitmix64(state_); }

  // uniform in [0, 1), 53-bit resolution
  double uniform() { return (double)(next_u64() >> 11) * 0x1.0p-53; }

  // inclusive bounds, unbiased via rejection
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = (std::uint64_t)(hi - lo) + 1;
    const std::uint64_t reject_above = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t u;
    do {
      u = next_u64();
    } while (u >= reject_above);
    return lo + (std::int64_t)(u % span);
  }

  // N(0,1) via Box-Muller, one trig pair per two draws
  double gaussian() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    // u1 in (0,1] so the log is finite
    const double u1 = ((double)(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = (double)(next_u64() >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double th = 6.283185307179586 * u2;
    cached_ = r * std::sin(th);
    has_cached_ = true;
    return r * std::cos(th);
  }

  // Independent child stream named by an integer or string label. Forking
  // depends only on the original seed and the label, never on draw position.
  Rng fork(std::uint64_t label) const {
    std::uint64_t s = seed_ ^ (0x9e3779b97f4a7c15ull + label * 0xd1342543de82ef95ull);
    (void)detail::splitmix64(s);
    return Rng(s);
  }
  Rng fork(std::string_view label) const { return fork(detail::fnv1a64(label)); }

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

template <typename S>
Tensor<S> gaussian(Rng& rng, Shape shape, double stddev = 1.0, bool requires_grad = false) {
  std::vector<S> v((std::size_t)numel_of(shape));
  for (S& x : v) x = (S)(stddev * rng.gaussian());
  return Tensor<S>::leaf(std::move(shape), std::move(v), requires_grad);
}

}  // namespace t2diff
