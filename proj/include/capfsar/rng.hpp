#pragma once

#include <cstdint>
#include <initializer_list>
#include <optional>

namespace capfsar {

/// Counter-based pseudo random generator.
///
/// Every draw is a pure function of (key, counter): the key is derived from
/// (seed, stream) with the SplitMix64 finalizer, and draw i returns
/// splitmix64_mix(key + (i + 1) * 0x9E3779B97F4A7C15). Two generators with
/// the same seed and stream always produce the same sequence, independent of
/// platform and standard library. Normals use the Box-Muller transform on two
/// consecutive uniforms; both outputs are used before drawing again.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0);

  /// Combines several integers into one stream id (order-sensitive).
  static std::uint64_t stream_id(std::initializer_list<std::uint64_t> parts);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_int(std::uint64_t n);
  double normal();

  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  std::optional<double> spare_normal_;
};

std::uint64_t splitmix64_mix(std::uint64_t z);

}  // namespace capfsar
