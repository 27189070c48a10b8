#include "capfsar/vtagg.hpp"

#include <cmath>
#include <vector>

#include "capfsar/error.hpp"
#include "capfsar/ops.hpp"

namespace capfsar {

namespace {

void add_linear(ParamSet& p, std::uint64_t seed, const std::string& prefix, const char* w,
                const char* b, std::size_t in, std::size_t out) {
  p.add(prefix + "." + w, seeded_uniform(seed, prefix + "." + w, in, out));
  p.add(prefix + "." + b, Tensor::zeros({out}));
}

void add_norm(ParamSet& p, const std::string& prefix, std::size_t c) {
  p.add(prefix + ".gamma", Tensor::full({c}, 1.0));
  p.add(prefix + ".beta", Tensor::zeros({c}));
}

void add_attention(ParamSet& p, std::uint64_t seed, const std::string& prefix, std::size_t c) {
  add_linear(p, seed, prefix, "wq", "bq", c, c);
  p.add(prefix + ".wk", seeded_uniform(seed, prefix + ".wk", c, c));
  add_linear(p, seed, prefix, "wv", "bv", c, c);
  add_linear(p, seed, prefix, "wo", "bo", c, c);
}

void add_block(ParamSet& p, std::uint64_t seed, const std::string& prefix, std::size_t c,
               std::size_t hidden) {
  add_norm(p, prefix + ".ln1", c);
  add_attention(p, seed, prefix + ".attn", c);
  add_norm(p, prefix + ".ln2", c);
  add_linear(p, seed, prefix + ".ffn", "w1", "b1", c, hidden);
  add_linear(p, seed, prefix + ".ffn", "w2", "b2", hidden, c);
}

Tensor linear(const Tensor& x, const ParamSet& p, const std::string& w, const std::string& b) {
  return add_bias(matmul(x, p.get(w)), p.get(b));
}

Tensor norm(const Tensor& x, const ParamSet& p, const std::string& prefix) {
  return layer_norm(x, p.get(prefix + ".gamma"), p.get(prefix + ".beta"), 1e-5);
}

bool uses_text_stage(const ModelConfig& c) {
  return c.fusion != FusionMode::visual_only && c.text_temporal;
}

}  // namespace

const char* to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::cross_attention: return "cross_attention";
    case FusionMode::concat: return "concat";
    case FusionMode::sum: return "sum";
    case FusionMode::visual_only: return "visual_only";
  }
  return "unknown";
}

std::optional<FusionMode> parse_fusion_mode(const std::string& name) {
  for (FusionMode m : {FusionMode::cross_attention, FusionMode::concat, FusionMode::sum,
                       FusionMode::visual_only}) {
    if (name == to_string(m)) return m;
  }
  return std::nullopt;
}

void validate(const ModelConfig& c) {
  if (c.layers < 1) throw ConfigError("model: layers must be >= 1");
  if (c.channels < 1 || c.heads < 1 || c.channels % c.heads != 0) {
    throw ConfigError("model: channels (" + std::to_string(c.channels) +
                      ") must be a positive multiple of heads (" + std::to_string(c.heads) + ")");
  }
  if (c.ffn_mult < 1) throw ConfigError("model: ffn_mult must be >= 1");
  if (c.frames < 1 || c.tokens < 1) throw ConfigError("model: frames and tokens must be >= 1");
}

Tensor sinusoidal_positions(std::size_t frames, std::size_t channels) {
  std::vector<double> table(frames * channels);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t k = 0; k < channels; ++k) {
      const double exponent = static_cast<double>(k - k % 2) / static_cast<double>(channels);
      const double angle = static_cast<double>(t) / std::pow(10000.0, exponent);
      table[t * channels + k] = (k % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor({frames, channels}, std::move(table));
}

Tensor spatial_gap(const Tensor& x) {
  if (x.rank() != 3) throw DimensionError("spatial_gap: expected [T x S x C], got " + shape_str(x.shape()));
  return mean_axis(x, 1);
}

Tensor multi_head_attention(const Tensor& queries, const Tensor& keys_values, const ParamSet& p,
                            const std::string& prefix, std::size_t heads) {
  const Tensor q = linear(queries, p, prefix + ".wq", prefix + ".bq");
  const Tensor k = matmul(keys_values, p.get(prefix + ".wk"));
  const Tensor v = linear(keys_values, p, prefix + ".wv", prefix + ".bv");
  const std::size_t c = q.dim(1);
  if (heads == 0 || c % heads != 0) throw ConfigError("attention: width not divisible by heads");
  Tensor mixed;
  if (heads == 1) {
    mixed = scaled_dot_attention(q, k, v);
  } else {
    const std::size_t d = c / heads;
    std::vector<Tensor> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      outs.push_back(scaled_dot_attention(slice(q, 1, h * d, (h + 1) * d),
                                          slice(k, 1, h * d, (h + 1) * d),
                                          slice(v, 1, h * d, (h + 1) * d)));
    }
    mixed = concat(outs, 1);
  }
  return linear(mixed, p, prefix + ".wo", prefix + ".bo");
}

ParamSet VtAggModel::initial_params(const ModelConfig& c) {
  validate(c);
  ParamSet p;
  const std::size_t ch = c.channels;
  const std::size_t hidden = std::size_t{c.ffn_mult} * ch;
  if (uses_text_stage(c)) {
    for (std::uint32_t l = 0; l < c.layers; ++l) add_block(p, c.seed, "text." + std::to_string(l), ch, hidden);
  }
  switch (c.fusion) {
    case FusionMode::cross_attention:
      add_attention(p, c.seed, "fuse.attn", ch);
      add_norm(p, "fuse.ln", ch);
      break;
    case FusionMode::concat:
      add_linear(p, c.seed, "fuse.proj", "w", "b", 2 * ch, ch);
      break;
    case FusionMode::sum:
    case FusionMode::visual_only:
      break;
  }
  for (std::uint32_t l = 0; l < c.layers; ++l) add_block(p, c.seed, "temporal." + std::to_string(l), ch, hidden);
  return p;
}

VtAggModel::VtAggModel(const ModelConfig& config) : VtAggModel(config, initial_params(config)) {}

VtAggModel::VtAggModel(const ModelConfig& config, ParamSet params)
    : config_(config), params_(std::move(params)),
      positions_(sinusoidal_positions(config.frames, config.channels)) {
  validate(config_);
  const ParamSet expected = initial_params(config_);
  if (expected.names() != params_.names()) {
    throw ConfigError("parameter set does not match the model configuration");
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (expected.tensors()[i].shape() != params_.tensors()[i].shape()) {
      throw DimensionError("parameter '" + expected.names()[i] + "' has shape " +
                           shape_str(params_.tensors()[i].shape()) + ", expected " +
                           shape_str(expected.tensors()[i].shape()));
    }
  }
}

void VtAggModel::check_visual(const Tensor& visual) const {
  const Shape want{config_.frames, config_.tokens, config_.channels};
  if (visual.shape() != want) {
    throw DimensionError("visual tokens " + shape_str(visual.shape()) + " do not match model " +
                         shape_str(want));
  }
}

void VtAggModel::check_text(const Tensor& text) const {
  const Shape want{config_.frames, config_.channels};
  if (text.shape() != want) {
    throw DimensionError("text tokens " + shape_str(text.shape()) + " do not match model " +
                         shape_str(want));
  }
}

Tensor VtAggModel::transformer_stage(const std::string& prefix, Tensor x) const {
  x = add(x, positions_);
  for (std::uint32_t l = 0; l < config_.layers; ++l) {
    const std::string b = prefix + "." + std::to_string(l);
    const Tensor h1 = norm(x, params_, b + ".ln1");
    x = add(x, multi_head_attention(h1, h1, params_, b + ".attn", config_.heads));
    const Tensor h2 = norm(x, params_, b + ".ln2");
    const Tensor hidden = gelu(linear(h2, params_, b + ".ffn.w1", b + ".ffn.b1"));
    x = add(x, linear(hidden, params_, b + ".ffn.w2", b + ".ffn.b2"));
  }
  return x;
}

Tensor VtAggModel::text_temporal_encode(const Tensor& text) const {
  check_text(text);
  if (!uses_text_stage(config_)) return text;
  return transformer_stage("text", text);
}

Tensor VtAggModel::cross_modal_fuse(const Tensor& visual, const Tensor& text_encoded) const {
  if (config_.fusion != FusionMode::cross_attention) {
    throw ConfigError("cross_modal_fuse requires fusion mode cross_attention");
  }
  check_visual(visual);
  check_text(text_encoded);
  const std::size_t t = config_.frames, s = config_.tokens, c = config_.channels;
  const Tensor tokens = reshape(visual, {t * s, c});
  const Tensor attended = multi_head_attention(tokens, text_encoded, params_, "fuse.attn", config_.heads);
  return reshape(norm(add(tokens, attended), params_, "fuse.ln"), {t, s, c});
}

Tensor VtAggModel::forward(const Tensor& visual, const Tensor& text) const {
  check_visual(visual);
  check_text(text);
  switch (config_.fusion) {
    case FusionMode::cross_attention:
      return transformer_stage("temporal",
                               spatial_gap(cross_modal_fuse(visual, text_temporal_encode(text))));
    case FusionMode::concat: {
      const Tensor parts[] = {spatial_gap(visual), text_temporal_encode(text)};
      return transformer_stage("temporal", linear(concat(parts, 1), params_, "fuse.proj.w", "fuse.proj.b"));
    }
    case FusionMode::sum:
      return transformer_stage("temporal", add(spatial_gap(visual), text_temporal_encode(text)));
    case FusionMode::visual_only:
      return transformer_stage("temporal", spatial_gap(visual));
  }
  throw ConfigError("unknown fusion mode");
}

}  // namespace capfsar
