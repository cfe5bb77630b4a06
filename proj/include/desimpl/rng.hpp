#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include "desimpl/core_types.hpp"

namespace desimpl {

/// SplitMix64 finalizer; used to derive independent substream seeds.
std::uint64_t mix64(std::uint64_t x);

/// Deterministic random stream.
///
/// The engine is std::mt19937_64 (bit-exact by the standard). The
/// distributions are implemented here because the standard library ones are
/// implementation-defined, and reports must be identical across toolchains.
class Rng {
 public:
  explicit Rng(Seed seed) : engine_(seed.value) {}

  /// Substream keyed by a fixed path of integers, e.g. {purpose, epoch, image}.
  /// Streams with different keys are independent of each other and of the
  /// order in which they are created.
  static Rng derive(Seed seed, std::initializer_list<std::uint64_t> keys);

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0,1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer on [lo, hi], unbiased.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  bool bernoulli(double p) { return uniform() < p; }
  double normal(double mean = 0.0, double stddev = 1.0);
  /// Knuth's product method; intended for small rates.
  int poisson(double rate);

 private:
  std::mt19937_64 engine_;
};

}  // namespace desimpl
