#include "capfsar/synthetic.hpp"

#include <cmath>
#include <string>

#include "capfsar/error.hpp"
#include "capfsar/rng.hpp"

namespace capfsar {

namespace {
enum Stream : std::uint64_t { kVisualProto = 1, kTextProto = 2, kVideo = 3 };

double f32(double v) { return static_cast<double>(static_cast<float>(v)); }
}  // namespace

void validate(const SyntheticSpec& spec) {
  if (spec.num_classes < 2) throw ConfigError("synthetic generator: num_classes must be >= 2");
  if (spec.videos_per_class < 2) throw ConfigError("synthetic generator: videos_per_class must be >= 2");
  if (spec.frames == 0 || spec.tokens == 0 || spec.channels == 0) {
    throw ConfigError("synthetic generator: T, S and C must be positive");
  }
  if (!(spec.visual_snr >= 0.0) || !(spec.text_snr >= 0.0) || !(spec.drift >= 0.0)) {
    throw ConfigError("synthetic generator: snr and drift must be >= 0");
  }
}

std::vector<FeatureRecord> gen_synthetic(const SyntheticSpec& spec) {
  validate(spec);
  const std::size_t T = spec.frames, S = spec.tokens, C = spec.channels;

  std::vector<std::vector<double>> visual_proto(spec.num_classes), text_proto(spec.num_classes);
  for (std::uint32_t c = 0; c < spec.num_classes; ++c) {
    CounterRng vr(spec.seed, CounterRng::stream_id({kVisualProto, c}));
    visual_proto[c].resize(S * C);
    for (double& v : visual_proto[c]) v = vr.normal();
    CounterRng tr(spec.seed, CounterRng::stream_id({kTextProto, c}));
    text_proto[c].resize(C);
    for (double& v : text_proto[c]) v = tr.normal();
  }

  std::vector<FeatureRecord> records;
  records.reserve(std::size_t{spec.num_classes} * spec.videos_per_class);
  std::vector<double> drift_v(C), drift_t(C);
  for (std::uint32_t v = 0; v < spec.videos_per_class; ++v) {
    for (std::uint32_t c = 0; c < spec.num_classes; ++c) {
      CounterRng rng(spec.seed, CounterRng::stream_id({kVideo, c, v}));
      for (double& d : drift_v) d = spec.drift * rng.normal();
      for (double& d : drift_t) d = spec.drift * rng.normal();

      FeatureRecord r;
      r.video_id = "syn_c" + std::to_string(c) + "_v" + std::to_string(v);
      r.class_id = c;
      r.frames = spec.frames;
      r.tokens = spec.tokens;
      r.channels = spec.channels;
      r.visual.resize(T * S * C);
      r.text.resize(T * C);
      for (std::size_t t = 0; t < T; ++t) {
        const double offset = static_cast<double>(t);
        for (std::size_t s = 0; s < S; ++s)
          for (std::size_t k = 0; k < C; ++k)
            r.visual[(t * S + s) * C + k] =
                f32(spec.visual_snr * visual_proto[c][s * C + k] + offset * drift_v[k] + rng.normal());
        for (std::size_t k = 0; k < C; ++k)
          r.text[t * C + k] = f32(spec.text_snr * text_proto[c][k] + offset * drift_t[k] + rng.normal());
        r.captions.push_back("synthetic class " + std::to_string(c) + " frame " + std::to_string(t));
      }
      records.push_back(std::move(r));
    }
  }
  return records;
}

ClassSplit halve_classes(std::uint32_t num_classes) {
  ClassSplit split;
  const std::uint32_t n_train = num_classes / 2;
  for (std::uint32_t c = 0; c < num_classes; ++c) (c < n_train ? split.train : split.test).push_back(c);
  return split;
}

}  // namespace capfsar
