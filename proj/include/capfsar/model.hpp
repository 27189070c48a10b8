#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "capfsar/episodes.hpp"
#include "capfsar/featurestore.hpp"
#include "capfsar/metrics.hpp"
#include "capfsar/vtagg.hpp"

namespace capfsar {

/// The aggregation module plus the metric head: everything that is trained.
class FewShotModel {
 public:
  FewShotModel(const ModelConfig& model, const MetricConfig& metric);
  FewShotModel(const ModelConfig& model, const MetricConfig& metric, ParamSet encoder_params,
               ParamSet metric_params);

  const VtAggModel& encoder() const noexcept { return encoder_; }
  const TemporalMetric& metric() const noexcept { return metric_; }
  const ModelConfig& model_config() const noexcept { return encoder_.config(); }
  const MetricConfig& metric_config() const noexcept { return metric_.config(); }

  /// Encoder tensors followed by metric tensors; handles share storage.
  ParamSet parameters() const;
  FewShotModel clone() const;

 private:
  VtAggModel encoder_;
  TemporalMetric metric_;
};

/// Distances [queries x way] for one episode, plus the true slot per query.
struct EpisodeScores {
  Tensor distances;
  std::vector<std::size_t> targets;
};

EpisodeScores score_episode(const Episode& episode, const FeatureStore& store, const FewShotModel& model,
                            Phase phase);

/// Mean cross-entropy of softmax(-distances) against the true slots.
Tensor distance_loss(const Tensor& distances, std::span<const std::size_t> targets);

/// Number of queries whose argmin distance (lowest slot on ties) is the true slot.
std::size_t count_correct(const EpisodeScores& scores);

Tensor episode_loss(const Episode& episode, const FeatureStore& store, const FewShotModel& model,
                    Phase phase = Phase::train);

// Checkpoint layout (little-endian uint32 unless noted):
//   "CAPK" | version (1)
//   layers | channels | heads | ffn_mult | frames | tokens | fusion | text_temporal | seed (2 words, low first)
//   metric kind | otam_lambda (float64) | bimhm_lambda (float64) | bimhm_smooth_eval
//   cardinality count | cardinalities...
//   tensor count, then per tensor: name_len | name | rank | extents... | float32 values
inline constexpr char kCheckpointMagic[4] = {'C', 'A', 'P', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const FewShotModel& model);
/// Rebuilds the model from the embedded configuration and checks every
/// tensor's name and shape against it.
FewShotModel decode_checkpoint(std::span<const std::uint8_t> bytes);
std::size_t save_checkpoint(const FewShotModel& model, const std::filesystem::path& path);
FewShotModel load_checkpoint(const std::filesystem::path& path);

/// Throws ConfigError if the model cannot consume records of this store.
void check_compatible(const FewShotModel& model, const StoreHeader& header);

}  // namespace capfsar
