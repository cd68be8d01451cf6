#pragma once

// Deterministic, platform-independent randomness. Everything is derived from
// explicit 64-bit seeds through splitmix64, so any draw can be replayed from
// (seed, tag, counters) alone. std::normal_distribution and std::shuffle are
// implementation-defined and are deliberately not used anywhere.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <vector>

namespace vkd::rng {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Folds a list of tags into a seed; order-sensitive.
inline std::uint64_t derive(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t s = splitmix64(seed);
  for (std::uint64_t t : tags) s = splitmix64(s ^ (t + 0x632be59bd9b4e019ull));
  return s;
}

// Stream tags used across the project; kept in one place so seed derivations
// never collide between subsystems.
enum Tag : std::uint64_t {
  kInitParams = 1,
  kShuffle = 2,
  kStepNoise = 3,
  kDropout = 4,
  kImageEps = 5,
  kTextEps = 6,
  kInferEps = 7,
  kValNoise = 8,
  kTask = 9,
  kConcept = 10,
  kImageNoise = 11,
  kKeyword = 12,
  kSplit = 13,
};

class Stream {
 public:
  explicit Stream(std::uint64_t seed) : state_(splitmix64(seed ^ 0xd1b54a32d192ed03ull)) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    std::uint64_t x = state_;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  // Uniform on [0, 1), 53-bit mantissa.
  double next_uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; second value of each pair is cached.
  double next_gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // u1 strictly in (0, 1] so log() is finite.
    double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    double u2 = next_uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  // Uniform integer in [0, n); n >= 1. Modulo bias is irrelevant here, the
  // contract is determinism, not perfect uniformity.
  std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Seeded Fisher-Yates permutation of {0, ..., n-1}.
inline std::vector<std::int64_t> permutation(std::int64_t n, std::uint64_t seed) {
  std::vector<std::int64_t> p(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
  Stream s(seed);
  for (std::int64_t i = n - 1; i > 0; --i) {
    auto j = static_cast<std::int64_t>(s.next_below(static_cast<std::uint64_t>(i + 1)));
    std::swap(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(j)]);
  }
  return p;
}

}  // namespace vkd::rng
