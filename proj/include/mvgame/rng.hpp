#pragma once

// Counter-based Gaussian noise: every (seed, particle, step) triple maps to an
// independent standard normal pair, so streams do not depend on scheduling.

#include "mvgame/linalg.hpp"

#include <boost/random/normal_distribution.hpp>

#include <cmath>
#include <cstdint>

namespace mvgame {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Step index reserved for sampling the initial cloud.
inline constexpr std::uint64_t kInitStep = ~std::uint64_t{0};

class NoiseStream {
 public:
  explicit NoiseStream(std::uint64_t seed) : key_(splitmix64(seed ^ 0x6A09E667F3BCC909ULL)) {}

  /// Two independent N(0,1) draws for one particle at one step.
  Vec2 normal_pair(std::uint64_t particle, std::uint64_t step) const {
    Counter gen{splitmix64(key_ ^ splitmix64(particle * 0xD1B54A32D192ED03ULL + step))};
    boost::random::normal_distribution<double> normal;
    const double a = normal(gen);
    return {a, normal(gen)};
  }

 private:
  // Weyl sequence through the splitmix finalizer, seeded per (particle, step).
  struct Counter {
    using result_type = std::uint64_t;
    std::uint64_t state;
    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return ~result_type{0}; }
    result_type operator()() { return splitmix64(state += 0x9E3779B97F4A7C15ULL); }
  };

  std::uint64_t key_;
};

}  // namespace mvgame
