#pragma once

#include <cstdint>
#include <string_view>

namespace maa {

// Portable random stream. The standard <random> distributions are
// implementation-defined, so every draw that reaches an artifact goes through
// the fixed mappings below instead.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();

  /// Uniform integer in [lo, hi] (inclusive), rejection sampled.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  /// Uniform real in [0, 1) with 53 bits of mantissa.
  double uniform01();

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Standard normal via Box-Muller (no cached second value).
  double normal();

  /// Independent child stream keyed by a label and an index.
  Rng substream(std::string_view label, std::uint64_t index = 0) const;

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

std::uint64_t splitmix64(std::uint64_t x);

/// FNV-1a over bytes; used for seeds and content hashes.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

}  // namespace maa
