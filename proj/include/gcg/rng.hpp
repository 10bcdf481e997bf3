#pragma once

#include <cstdint>
#include <string_view>

namespace gcg {

/// Deterministic xorshift-family generator (xoshiro256**), seeded through
/// splitmix64. Every random decision in the project flows from one u64
/// master seed via derive_seed streams, so identical seeds give
/// bit-identical runs on any platform.
class Rng {
public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();
  /// Uniform in [0, 1) with 53 significant bits.
  double next_double();
  double uniform(double lo, double hi);
  /// Standard normal via Box-Muller; consumes exactly two raw draws.
  double normal();
  /// Uniform integer in [0, n). n must be positive.
  uint64_t next_below(uint64_t n);
  /// Uniform integer in [lo, hi] inclusive.
  int64_t int_range(int64_t lo, int64_t hi);

  /// Number of raw 64-bit draws so far. Used to assert that eval-mode
  /// forward passes never touch the generator.
  uint64_t draws() const { return draws_; }

private:
  uint64_t state_[4];
  uint64_t draws_ = 0;
};

/// splitmix64 step; advances state and returns the next value.
uint64_t split_mix64(uint64_t& state);

/// Child seed for an independent named stream of randomness.
uint64_t derive_seed(uint64_t master, uint64_t stream);
uint64_t derive_seed(uint64_t master, std::string_view tag);

} // namespace gcg
