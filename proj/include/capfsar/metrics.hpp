#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "capfsar/params.hpp"
#include "capfsar/tensor.hpp"

namespace capfsar {

enum class MetricKind { otam, trx, bimhm, proto };

const char* to_string(MetricKind kind);
std::optional<MetricKind> parse_metric_kind(const std::string& name);

/// Training computes gradients through the metric; evaluation does not.
enum class Phase { train, eval };

struct MetricConfig {
  MetricKind kind = MetricKind::otam;
  /// Smooth-min temperature of the alignment recursion (both phases).
  double otam_lambda = 0.1;
  /// Smooth-min temperature used for bimhm while training.
  double bimhm_lambda = 0.1;
  /// Evaluate bimhm with the smooth min too (default: hard min).
  bool bimhm_smooth_eval = false;
  /// Tuple cardinalities for trx; each must be 2 or 3.
  std::vector<std::uint32_t> trx_cardinalities{2, 3};

  bool operator==(const MetricConfig&) const = default;
};

void validate(const MetricConfig& config);

/// d(i, j) = 1 - cos(q_i, s_j) for q[Tq x C], s[Ts x C]. Zero rows are rejected.
Tensor frame_distance_matrix(const Tensor& q, const Tensor& s);

/// Exhaustive minimum over every monotone path that visits each query row
/// once (column stays or advances by one per row, any start, any end column).
/// Only for matrices up to 8 x 8.
double dtw_bruteforce(const Tensor& cost);

/// Boundary-relaxed soft DTW over a cost matrix; exact DTW at lambda == 0.
Tensor otam_distance(const Tensor& cost, double lambda);

/// Bidirectional mean minimum over a cost matrix:
/// mean_i min_j d(i, j) + mean_j min_i d(i, j), with smooth mins when lambda > 0.
Tensor bimhm_from_costs(const Tensor& cost, double lambda = 0.0);
Tensor bimhm_distance(const Tensor& q, const Tensor& s, double lambda = 0.0);

/// 1 - cos between the temporal means of q and s.
Tensor proto_distance(const Tensor& q, const Tensor& s);

/// All index tuples i1 < ... < i_card over `frames` frames, lexicographic.
std::vector<std::vector<std::size_t>> frame_tuples(std::size_t frames, std::size_t card);

/// Registers trx parameters for each cardinality w under `trx.<w>.`:
/// tuple projection proj.w [w*C x C], proj.b [C], and wq, wk, wv [C x C].
void add_trx_params(ParamSet& params, std::size_t channels,
                    std::span<const std::uint32_t> cardinalities, std::uint64_t seed);

/// Tuple-matching distance. For each cardinality, every ordered frame tuple is
/// concatenated and projected; query tuples attend over the pooled tuples of
/// all `supports`; the distance is the mean squared gap between each query
/// tuple's value projection and its reconstruction, averaged over
/// cardinalities.
Tensor trx_distance(const Tensor& q, std::span<const Tensor> supports, const ParamSet& params,
                    std::span<const std::uint32_t> cardinalities);

/// A class's K support videos combined per metric: otam and proto keep the
/// frame-wise mean (one video), bimhm and trx keep every video.
struct ClassSupport {
  MetricKind kind = MetricKind::otam;
  std::vector<Tensor> videos;
};

ClassSupport fuse_support(std::span<const Tensor> videos, MetricKind kind);

struct Prediction {
  std::vector<double> probabilities;
  std::size_t slot = 0;
};

/// probabilities = softmax(-distances); slot = argmin, ties to the lowest slot.
Prediction classify_query(std::span<const double> distances);

/// A metric backend together with its own trainable parameters (trx only).
class TemporalMetric {
 public:
  TemporalMetric(const MetricConfig& config, std::size_t channels, std::uint64_t seed);
  TemporalMetric(const MetricConfig& config, ParamSet params);

  const MetricConfig& config() const noexcept { return config_; }
  ParamSet& params() noexcept { return params_; }
  const ParamSet& params() const noexcept { return params_; }

  ClassSupport fuse(std::span<const Tensor> videos) const { return fuse_support(videos, config_.kind); }
  /// Scalar distance between one query's features and a fused class.
  Tensor distance(const Tensor& query, const ClassSupport& support, Phase phase) const;

  static ParamSet initial_params(const MetricConfig& config, std::size_t channels, std::uint64_t seed);

 private:
  MetricConfig config_;
  ParamSet params_;
};

}  // namespace capfsar
