#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace c2l {

// Address of a random stream. Two streams with equal keys produce equal
// draws no matter how many other streams were consumed before them.
struct StreamKey {
  std::uint64_t seed = 0;
  std::uint64_t iteration = 0;
  std::uint64_t batch = 0;
  std::uint64_t sample = 0;
  std::uint64_t op = 0;
};

// Values for StreamKey::batch naming what a stream is used for.
namespace stream {
inline constexpr std::uint64_t kView1 = 1;
inline constexpr std::uint64_t kView2 = 2;
inline constexpr std::uint64_t kMixup = 3;
inline constexpr std::uint64_t kShuffle = 4;
inline constexpr std::uint64_t kInit = 5;
inline constexpr std::uint64_t kQueue = 6;
inline constexpr std::uint64_t kEval = 7;
inline constexpr std::uint64_t kSynth = 8;
inline constexpr std::uint64_t kMixupView2 = 9;
}  // namespace stream

inline constexpr std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Counter-based generator: draw i is a hash of (key, i). Conversions to
// real values are done here rather than through <random> distributions so
// sequences are identical across standard libraries.
class RngStream {
 public:
  using result_type = std::uint64_t;

  explicit RngStream(const StreamKey& key) {
    std::uint64_t h = splitmix64(key.seed);
    h = splitmix64(h ^ key.iteration);
    h = splitmix64(h ^ key.batch);
    h = splitmix64(h ^ key.sample);
    h = splitmix64(h ^ key.op);
    base_ = h;
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }
  result_type operator()() { return next_u64(); }

  std::uint64_t next_u64() { return splitmix64(base_ + 0x632be59bd9b4e019ULL * ++counter_); }

  // Uniform on [0, 1) with 53 bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  bool bernoulli(double p) { return uniform() < p; }

  // Uniform integer in [0, n) by rejection, unbiased.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("RngStream::below(0)");
    const std::uint64_t limit = max() - max() % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  // Standard normal via Box-Muller.
  double normal() {
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Uniformly random permutation of 0..n-1 (Fisher-Yates).
  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    for (std::size_t i = n; i > 1; --i) {
      const std::size_t j = below(i);
      std::swap(p[i - 1], p[j]);
    }
    return p;
  }

  std::uint64_t draws() const { return counter_; }

 private:
  std::uint64_t base_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace c2l
