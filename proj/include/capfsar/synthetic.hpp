#pragma once

#include <cstdint>
#include <vector>

#include "capfsar/featurestore.hpp"

namespace capfsar {

/// Parameters of the constructed-signal generator.
///
/// Frame t of video v in class c (visual token s, or the text embedding):
///   visual_snr * P_c[s] + t * d_v + e      (visual)
///   text_snr   * p_c    + t * d'_v + e'    (text)
/// P_c, p_c: class prototypes with standard-normal entries.
/// d_v, d'_v: per-video drift vectors, entries N(0, drift^2).
/// e, e': independent standard-normal noise per frame, token and channel.
/// An snr of 0 therefore leaves no class signal in that modality.
struct SyntheticSpec {
  std::uint32_t num_classes = 10;
  std::uint32_t videos_per_class = 10;
  std::uint32_t frames = 8;
  std::uint32_t tokens = 4;
  std::uint32_t channels = 64;
  double visual_snr = 1.0;
  double text_snr = 1.0;
  double drift = 0.5;
  std::uint64_t seed = 0;
};

void validate(const SyntheticSpec& spec);

/// Records are ordered video-major (all classes' video 0, then video 1, ...)
/// and each record depends only on (seed, class, video index), so growing
/// videos_per_class appends records without touching existing ones. Values
/// are rounded to float32 so a store round trip is exact.
std::vector<FeatureRecord> gen_synthetic(const SyntheticSpec& spec);

/// Convenience: first half of the classes for training, the rest for test.
struct ClassSplit {
  std::vector<std::uint32_t> train;
  std::vector<std::uint32_t> test;
};
ClassSplit halve_classes(std::uint32_t num_classes);

}  // namespace capfsar
