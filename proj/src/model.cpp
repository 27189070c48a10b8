#include "capfsar/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "capfsar/error.hpp"
#include "capfsar/ops.hpp"

namespace capfsar {

namespace {

ParamSet slice_params(const ParamSet& all, std::size_t begin, std::size_t end) {
  ParamSet out;
  for (std::size_t i = begin; i < end; ++i) out.add(all.names()[i], all.tensors()[i]);
  return out;
}

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    u32(static_cast<std::uint32_t>(v));
    u32(static_cast<std::uint32_t>(v >> 32));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void text(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}
  std::uint32_t u32() {
    if (bytes_.size() - pos_ < 4) throw CorruptionError("truncated checkpoint", pos_);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    const std::uint64_t lo = u32();
    return lo | (static_cast<std::uint64_t>(u32()) << 32);
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string text() {
    const std::uint32_t n = u32();
    if (bytes_.size() - pos_ < n) throw CorruptionError("truncated checkpoint", pos_);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

FewShotModel::FewShotModel(const ModelConfig& model, const MetricConfig& metric)
    : encoder_(model), metric_(metric, model.channels, model.seed) {}

FewShotModel::FewShotModel(const ModelConfig& model, const MetricConfig& metric,
                           ParamSet encoder_params, ParamSet metric_params)
    : encoder_(model, std::move(encoder_params)), metric_(metric, std::move(metric_params)) {
  const ParamSet expected = TemporalMetric::initial_params(metric, model.channels, model.seed);
  if (expected.names() != metric_.params().names()) {
    throw ConfigError("metric parameters do not match the metric configuration");
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (expected.tensors()[i].shape() != metric_.params().tensors()[i].shape()) {
      throw DimensionError("metric parameter '" + expected.names()[i] + "' has the wrong shape");
    }
  }
}

ParamSet FewShotModel::parameters() const {
  ParamSet all = encoder_.params();
  all.extend(metric_.params());
  return all;
}

FewShotModel FewShotModel::clone() const {
  return FewShotModel(encoder_.config(), metric_.config(), encoder_.params().clone(),
                      metric_.params().clone());
}

EpisodeScores score_episode(const Episode& episode, const FeatureStore& store,
                            const FewShotModel& model, Phase phase) {
  const auto encode = [&](std::size_t record) {
    const FeatureRecord& r = store.record(record);
    return model.encoder().forward(r.visual_tensor(), r.text_tensor());
  };
  std::vector<ClassSupport> classes;
  classes.reserve(episode.way);
  for (std::size_t slot = 0; slot < episode.way; ++slot) {
    std::vector<Tensor> videos;
    for (std::size_t rec : episode.support_of(slot)) videos.push_back(encode(rec));
    classes.push_back(model.metric().fuse(videos));
  }
  std::vector<Tensor> cells;
  cells.reserve(episode.queries.size() * episode.way);
  EpisodeScores out;
  for (const QueryItem& q : episode.queries) {
    const Tensor features = encode(q.record);
    for (const ClassSupport& c : classes) cells.push_back(model.metric().distance(features, c, phase));
    out.targets.push_back(q.slot);
  }
  out.distances = reshape(concat(cells, 0), {episode.queries.size(), episode.way});
  return out;
}

Tensor distance_loss(const Tensor& distances, std::span<const std::size_t> targets) {
  return softmax_cross_entropy(scale(distances, -1.0), targets);
}

std::size_t count_correct(const EpisodeScores& scores) {
  const std::size_t way = scores.distances.dim(1);
  const auto d = scores.distances.values();
  std::size_t correct = 0;
  for (std::size_t q = 0; q < scores.targets.size(); ++q) {
    std::size_t best = 0;
    for (std::size_t s = 1; s < way; ++s)
      if (d[q * way + s] < d[q * way + best]) best = s;
    if (best == scores.targets[q]) ++correct;
  }
  return correct;
}

Tensor episode_loss(const Episode& episode, const FeatureStore& store, const FewShotModel& model,
                    Phase phase) {
  const EpisodeScores s = score_episode(episode, store, model, phase);
  return distance_loss(s.distances, s.targets);
}

std::vector<std::uint8_t> encode_checkpoint(const FewShotModel& model) {
  const ModelConfig& mc = model.model_config();
  const MetricConfig& me = model.metric_config();
  Writer w;
  w.bytes.insert(w.bytes.end(), kCheckpointMagic, kCheckpointMagic + 4);
  w.u32(kCheckpointVersion);
  w.u32(mc.layers);
  w.u32(mc.channels);
  w.u32(mc.heads);
  w.u32(mc.ffn_mult);
  w.u32(mc.frames);
  w.u32(mc.tokens);
  w.u32(static_cast<std::uint32_t>(mc.fusion));
  w.u32(mc.text_temporal ? 1 : 0);
  w.u64(mc.seed);
  w.u32(static_cast<std::uint32_t>(me.kind));
  w.f64(me.otam_lambda);
  w.f64(me.bimhm_lambda);
  w.u32(me.bimhm_smooth_eval ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(me.trx_cardinalities.size()));
  for (std::uint32_t c : me.trx_cardinalities) w.u32(c);

  const ParamSet params = model.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& t = params.tensors()[i];
    w.text(params.names()[i]);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) w.u32(static_cast<std::uint32_t>(e));
    for (double v : t.values()) w.u32(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return std::move(w.bytes);
}

FewShotModel decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw FormatError("bad magic: not a checkpoint");
  }
  Reader r(bytes.subspan(4));
  if (const std::uint32_t v = r.u32(); v != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(v));
  }
  ModelConfig mc;
  mc.layers = r.u32();
  mc.channels = r.u32();
  mc.heads = r.u32();
  mc.ffn_mult = r.u32();
  mc.frames = r.u32();
  mc.tokens = r.u32();
  const std::uint32_t fusion = r.u32();
  if (fusion > static_cast<std::uint32_t>(FusionMode::visual_only)) throw FormatError("bad fusion mode");
  mc.fusion = static_cast<FusionMode>(fusion);
  mc.text_temporal = r.u32() != 0;
  mc.seed = r.u64();
  MetricConfig me;
  const std::uint32_t kind = r.u32();
  if (kind > static_cast<std::uint32_t>(MetricKind::proto)) throw FormatError("bad metric kind");
  me.kind = static_cast<MetricKind>(kind);
  me.otam_lambda = r.f64();
  me.bimhm_lambda = r.f64();
  me.bimhm_smooth_eval = r.u32() != 0;
  const std::uint32_t ncard = r.u32();
  if (ncard > 8) throw FormatError("implausible cardinality count");
  me.trx_cardinalities.clear();
  for (std::uint32_t i = 0; i < ncard; ++i) me.trx_cardinalities.push_back(r.u32());
  validate(mc);
  validate(me);

  const ParamSet enc_expected = VtAggModel::initial_params(mc);
  const ParamSet met_expected = TemporalMetric::initial_params(me, mc.channels, mc.seed);
  ParamSet expected = enc_expected;
  expected.extend(met_expected);

  const std::uint32_t count = r.u32();
  if (count != expected.size()) {
    throw FormatError("checkpoint holds " + std::to_string(count) + " tensors, configuration needs " +
                      std::to_string(expected.size()));
  }
  ParamSet loaded;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.text();
    if (name != expected.names()[i]) {
      throw FormatError("checkpoint tensor '" + name + "' where '" + expected.names()[i] + "' was expected");
    }
    Shape shape(r.u32());
    for (auto& e : shape) e = r.u32();
    if (shape != expected.tensors()[i].shape()) {
      throw DimensionError("checkpoint tensor '" + name + "' has shape " + shape_str(shape) +
                           ", configuration needs " + shape_str(expected.tensors()[i].shape()));
    }
    std::vector<double> values(shape_numel(shape));
    for (double& v : values) v = static_cast<double>(std::bit_cast<float>(r.u32()));
    loaded.add(name, Tensor(shape, std::move(values)));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint tensors");
  return FewShotModel(mc, me, slice_params(loaded, 0, enc_expected.size()),
                      slice_params(loaded, enc_expected.size(), loaded.size()));
}

std::size_t save_checkpoint(const FewShotModel& model, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(model);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path.string());
  return bytes.size();
}

FewShotModel load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path));
}

void check_compatible(const FewShotModel& model, const StoreHeader& header) {
  const ModelConfig& c = model.model_config();
  if (c.frames != header.frames || c.tokens != header.tokens || c.channels != header.channels) {
    throw ConfigError("model expects T=" + std::to_string(c.frames) + " S=" + std::to_string(c.tokens) +
                      " C=" + std::to_string(c.channels) + " but the store has T=" +
                      std::to_string(header.frames) + " S=" + std::to_string(header.tokens) +
                      " C=" + std::to_string(header.channels));
  }
}

}  // namespace capfsar
