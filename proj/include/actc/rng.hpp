#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace actc {

// Deterministic 64-bit PRNG (splitmix64). Identical seeds give identical
// draw sequences on every platform; streams are split by purpose so that
// e.g. data generation and parameter init never interleave.
class SeededRng {
public:
  explicit SeededRng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Independent stream derived from this seed and a purpose tag.
  SeededRng split(std::uint64_t stream_id) const {
    SeededRng mixer(state_ ^ (0x2545f4914f6cdd1dull * (stream_id + 1)));
    return SeededRng(mixer.next_u64());
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi] inclusive.
  std::uint64_t uniform_int(std::uint64_t lo, std::uint64_t hi) {
    return lo + next_u64() % (hi - lo + 1);
  }

  // Standard normal via Box-Muller; stateless beyond the counter (no cached
  // spare) so serialized state is a single word.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  std::uint64_t state() const { return state_; }
  void set_state(std::uint64_t s) { state_ = s; }

private:
  std::uint64_t state_;
};

// Purpose tags for stream splitting.
enum RngStream : std::uint64_t {
  kStreamInit = 1,
  kStreamData = 2,
  kStreamShuffle = 3,
  kStreamTest = 4,
};

}  // namespace actc
