#pragma once

#include <cstdint>
#include <string_view>

namespace rockres {

std::uint64_t splitmix64(std::uint64_t x) noexcept;
/// Order-sensitive combination of two keys.
std::uint64_t mix_keys(std::uint64_t a, std::uint64_t b) noexcept;
/// FNV-1a, stable across platforms.
std::uint64_t hash_string(std::string_view s) noexcept;

/// Counter-based generator: draw i is a pure function of (key, i), so any
/// stream can be reproduced from its key alone.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) noexcept : key_(key) {}
  CounterRng(std::uint64_t seed, std::uint64_t stream) noexcept : key_(mix_keys(seed, stream)) {}

  std::uint64_t next_u64() noexcept { return splitmix64(key_ ^ splitmix64(counter_++)); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  bool bernoulli(double p) noexcept { return uniform() < p; }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept;
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace rockres
