#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "capfsar/params.hpp"
#include "capfsar/tensor.hpp"

namespace capfsar {

/// How caption embeddings meet the visual tokens.
enum class FusionMode {
  cross_attention,  // visual tokens query the encoded caption sequence
  concat,           // [GAP(visual), text] projected 2C -> C
  sum,              // GAP(visual) + text
  visual_only,      // text branch removed
};

const char* to_string(FusionMode mode);
std::optional<FusionMode> parse_fusion_mode(const std::string& name);

struct ModelConfig {
  std::uint32_t layers = 1;  // Transformer blocks per stage (L)
  std::uint32_t channels = 64;
  std::uint32_t heads = 4;
  std::uint32_t ffn_mult = 2;
  std::uint32_t frames = 8;
  std::uint32_t tokens = 4;
  FusionMode fusion = FusionMode::cross_attention;
  /// When false the caption embeddings skip the text temporal Transformer.
  bool text_temporal = true;
  std::uint64_t seed = 0;

  bool operator==(const ModelConfig&) const = default;
};

void validate(const ModelConfig& config);

/// Sinusoidal temporal positions, [frames x channels]:
/// even channel 2i -> sin(t / 10000^(2i/C)), odd channel 2i+1 -> cos(same).
Tensor sinusoidal_positions(std::size_t frames, std::size_t channels);

/// Mean over the spatial axis: [T x S x C] -> [T x C].
Tensor spatial_gap(const Tensor& x);

/// Visual-text aggregation: turns per-frame visual tokens and caption
/// embeddings into one [T x C] feature sequence per video.
///
/// cross_attention:
///   text' = TextTransformer(text + pos)
///   fused = LayerNorm(visual + CrossAttn(q = visual tokens, kv = text'))
///   out   = TemporalTransformer(GAP(fused) + pos)
/// Transformer blocks are pre-norm (self-attention then a GELU FFN, each with
/// a residual connection). Cross attention runs every one of the T*S visual
/// tokens against all T caption tokens.
class VtAggModel {
 public:
  /// Parameters are initialised from config.seed only: weights uniform in
  /// +-1/sqrt(fan_in), biases 0, layer-norm gain 1 and shift 0.
  explicit VtAggModel(const ModelConfig& config);
  VtAggModel(const ModelConfig& config, ParamSet params);

  const ModelConfig& config() const noexcept { return config_; }
  ParamSet& params() noexcept { return params_; }
  const ParamSet& params() const noexcept { return params_; }

  /// [T x C] -> [T x C]. Identity when config.text_temporal is false.
  Tensor text_temporal_encode(const Tensor& text) const;
  /// [T x S x C], [T x C] -> [T x S x C]. Requires cross_attention mode.
  Tensor cross_modal_fuse(const Tensor& visual, const Tensor& text_encoded) const;
  /// [T x S x C], [T x C] -> [T x C]
  Tensor forward(const Tensor& visual, const Tensor& text) const;

  /// Parameter names and shapes implied by a config, in registration order.
  static ParamSet initial_params(const ModelConfig& config);

 private:
  Tensor transformer_stage(const std::string& prefix, Tensor x) const;
  void check_visual(const Tensor& visual) const;
  void check_text(const Tensor& text) const;

  ModelConfig config_;
  ParamSet params_;
  Tensor positions_;
};

/// Multi-head attention with learned projections. Parameters are looked up as
/// `<prefix>.wq`, `.bq`, `.wk`, `.wv`, `.bv`, `.wo`, `.bo` in `params`.
Tensor multi_head_attention(const Tensor& queries, const Tensor& keys_values, const ParamSet& params,
                            const std::string& prefix, std::size_t heads);

}  // namespace capfsar
