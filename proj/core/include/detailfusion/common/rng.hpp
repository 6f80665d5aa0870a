#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace dfusion {

// Deterministic random source. The engine is std::mt19937_64 (bit-exact across
// standard libraries); the sampling helpers below avoid the implementation-
// defined std:: distributions so generated data is identical on every
// platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Independent stream for (seed, tag, index): used for per-triplet and
  // per-epoch randomness so that work can be split without changing output.
  static Rng substream(std::uint64_t seed, std::string_view tag, std::uint64_t index);

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1) with 53 bits of precision.
  double uniform();
  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);
  // Uniform integer in [lo, hi].
  int range(int lo, int hi);
  bool bernoulli(double p) { return uniform() < p; }
  double normal();
  // Normal(0, sigma) truncated to [-2 sigma, 2 sigma] by resampling.
  double truncated_normal(double sigma);

  template <typename It>
  void shuffle(It first, It last) {
    auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      auto j = below(i);
      std::swap(first[i - 1], first[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace dfusion
