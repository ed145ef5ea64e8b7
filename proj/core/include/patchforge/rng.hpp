#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "patchforge/common.hpp"

namespace patchforge {

// mt19937_64 with hand-rolled draw functions. The standard <random>
// distributions keep hidden state (e.g. the cached second gaussian), which
// would make checkpointed RNG state incomplete; everything here is a pure
// function of the engine, so serializing the engine serializes the stream.
class Rng {
public:
  Rng() : Rng(0) {}
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // uniform in [0, 1) with 53-bit resolution
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // unbiased integer in [0, n)
  uint64_t uniform_int(uint64_t n) {
    check(n > 0, "uniform_int: n must be positive");
    const uint64_t bound = UINT64_MAX - UINT64_MAX % n;
    uint64_t x = engine_();
    while (x >= bound) x = engine_();
    return x % n;
  }

  bool bernoulli(double p) { return uniform01() < p; }

  // Box-Muller without the usual pair cache
  double normal() {
    double u1 = uniform01(), u2 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  std::string save_state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }

  void restore_state(const std::string& s) {
    std::istringstream is(s);
    is >> engine_;
    check(!is.fail(), "Rng::restore_state: malformed state string");
  }

  // derive an independent stream (e.g. per-purpose sub-rngs from one seed)
  Rng fork() { return Rng(engine_() ^ 0x9e3779b97f4a7c15ull); }

private:
  std::mt19937_64 engine_;
};

}  // namespace patchforge
