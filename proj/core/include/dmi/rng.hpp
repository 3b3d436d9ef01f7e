// Copyright 2026 The dmirec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace dmi {

/// Counter-based generator: the n-th output is a pure function of
/// (key, n). Substreams are derived by hashing a stream id into the key,
/// so workers can draw reproducibly without sharing state.
///
/// Distributions are implemented here rather than taken from <random>
/// because libstdc++/libc++ distributions are not required to agree.
class CounterRng {
 public:
  CounterRng() = default;
  explicit CounterRng(std::uint64_t seed) : key_(mix(seed ^ 0x9e3779b97f4a7c15ULL)) {}
  CounterRng(std::uint64_t key, std::uint64_t counter) : key_(key), counter_(counter) {}

  /// Independent stream for e.g. a user id or worker index.
  [[nodiscard]] CounterRng substream(std::uint64_t stream_id) const {
    return CounterRng(mix(key_ ^ mix(stream_id + 0x632be59bd9b4e019ULL)), 0);
  }

  std::uint64_t next_u64() { return mix(key_ + mix(counter_++)); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Lemire's multiply-shift with rejection.
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t x = next_u64();
      __extension__ using u128 = unsigned __int128;
      const u128 m = static_cast<u128>(x) * n;
      if (static_cast<std::uint64_t>(m) >= threshold) return static_cast<std::uint64_t>(m >> 64);
    }
  }

  /// Standard normal via Box-Muller; one draw per call (the sine branch
  /// is discarded so the counter advances by exactly two per sample).
  double normal() {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  [[nodiscard]] std::uint64_t key() const { return key_; }
  [[nodiscard]] std::uint64_t counter() const { return counter_; }

  friend bool operator==(const CounterRng&, const CounterRng&) = default;

 private:
  // SplitMix64 finalizer.
  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_ = mix(0x9e3779b97f4a7c15ULL);
  std::uint64_t counter_ = 0;
};

}  // namespace dmi
