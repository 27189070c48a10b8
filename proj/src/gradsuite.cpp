#include "capfsar/gradsuite.hpp"

#include <sstream>

#include "capfsar/episodes.hpp"
#include "capfsar/model.hpp"
#include "capfsar/rng.hpp"

namespace capfsar {

GradCase grad_case(std::uint64_t suite_seed, std::uint64_t index) {
  static constexpr FusionMode kModes[] = {FusionMode::cross_attention, FusionMode::concat, FusionMode::sum,
                                          FusionMode::visual_only};
  static constexpr MetricKind kMetrics[] = {MetricKind::otam, MetricKind::bimhm, MetricKind::trx,
                                            MetricKind::proto};
  CounterRng rng(suite_seed, CounterRng::stream_id({0x47524144ULL, index}));
  GradCase c;
  c.model.fusion = kModes[index % 4];
  c.metric.kind = kMetrics[(index / 4) % 4];
  c.model.heads = 1 + static_cast<std::uint32_t>(rng.uniform_int(2));
  c.model.channels = c.model.heads * (3 + static_cast<std::uint32_t>(rng.uniform_int(3)));
  c.model.layers = 1 + static_cast<std::uint32_t>(rng.uniform_int(2));
  c.model.ffn_mult = 1 + static_cast<std::uint32_t>(rng.uniform_int(2));
  c.model.frames = 3 + static_cast<std::uint32_t>(rng.uniform_int(2));
  if (c.metric.kind == MetricKind::trx) c.model.frames = 4;
  c.model.tokens = 1 + static_cast<std::uint32_t>(rng.uniform_int(2));
  c.model.text_temporal = rng.uniform_int(4) != 0;
  c.model.seed = rng.next_u64();
  if (c.metric.kind == MetricKind::trx) {
    c.metric.trx_cardinalities = rng.uniform_int(2) == 0 ? std::vector<std::uint32_t>{2, 3}
                                                        : std::vector<std::uint32_t>{2};
  }
  c.way = 2 + static_cast<std::size_t>(rng.uniform_int(2));
  c.shot = 1 + static_cast<std::size_t>(rng.uniform_int(2));
  c.input_seed = rng.next_u64();
  return c;
}

std::string describe(const GradCase& c) {
  std::ostringstream os;
  os << to_string(c.model.fusion) << '/' << to_string(c.metric.kind) << " L=" << c.model.layers
     << " C=" << c.model.channels << " heads=" << c.model.heads << " T=" << c.model.frames
     << " S=" << c.model.tokens << " text_temporal=" << (c.model.text_temporal ? "on" : "off")
     << " way=" << c.way << " shot=" << c.shot;
  return os.str();
}

GradCheckReport grad_check_case(const GradCase& c, double h) {
  const std::size_t per_class = c.shot + 1;
  CounterRng data(c.input_seed, 1);
  std::vector<FeatureRecord> records;
  for (std::uint32_t cls = 0; cls < c.way; ++cls) {
    for (std::size_t v = 0; v < per_class; ++v) {
      FeatureRecord r;
      r.video_id = "g" + std::to_string(cls) + "_" + std::to_string(v);
      r.class_id = cls;
      r.frames = c.model.frames;
      r.tokens = c.model.tokens;
      r.channels = c.model.channels;
      r.visual.resize(std::size_t{r.frames} * r.tokens * r.channels);
      r.text.resize(std::size_t{r.frames} * r.channels);
      for (double& x : r.visual) x = data.normal();
      for (double& x : r.text) x = data.normal();
      r.captions.assign(r.frames, "");
      records.push_back(std::move(r));
    }
  }
  const FeatureStore store = make_store(std::move(records));
  const std::vector<std::uint32_t> classes = store.class_ids();
  CounterRng episode_stream(c.input_seed, 2);
  const Episode episode = sample_episode(store, classes, c.way, c.shot, 1, episode_stream);

  FewShotModel model(c.model, c.metric);
  ParamSet params = model.parameters();
  return grad_check_leaves([&] { return episode_loss(episode, store, model, Phase::train); }, params.tensors(),
                           params.names(), h);
}

}  // namespace capfsar
