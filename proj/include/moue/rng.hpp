#pragma once

#include <cstdint>

namespace moue {

/// SplitMix64 pseudo-random generator (Steele, Lea & Flood 2014).
///
/// Chosen over std::mt19937 + <random> distributions because the standard
/// distributions are implementation-defined: identical seeds must produce
/// bit-identical streams on every platform (the CSV artifacts are compared
/// byte-for-byte). The full algorithm is documented in docs/formats.md.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1) with 53 mantissa bits.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n). n must be positive; modulo bias is
  /// negligible for the small ranges used here and keeps the stream layout
  /// trivial to document.
  int next_below(int n) { return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n)); }

  /// Standard normal via Box-Muller; consumes two uniforms per pair and
  /// caches the spare.
  double next_normal();

  /// Derive an independent child stream (used to split seeds per purpose
  /// without correlating streams).
  SplitMix64 split(std::uint64_t salt) { return SplitMix64(next_u64() ^ salt); }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace moue
