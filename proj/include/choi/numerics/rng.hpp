#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace choi {

/// Seeded generator shared by every stochastic component.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  /// Integer in [lo, hi] inclusive.
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    // Fisher-Yates with our own draws so the order does not depend on std::shuffle internals.
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(integer(0, static_cast<int>(i - 1)));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// Independent child stream, e.g. one per scene.
  Rng derive(std::uint64_t salt) {
    std::seed_seq seq{static_cast<std::uint32_t>(engine_() & 0xffffffffu), static_cast<std::uint32_t>(salt & 0xffffffffu),
                      static_cast<std::uint32_t>(salt >> 32)};
    std::mt19937_64 e(seq);
    return Rng(e());
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace choi
