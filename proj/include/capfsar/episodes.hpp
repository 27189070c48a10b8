#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "capfsar/featurestore.hpp"
#include "capfsar/rng.hpp"

namespace capfsar {

struct QueryItem {
  std::size_t record = 0;  // index into the store
  std::size_t slot = 0;    // true class slot in [0, way)
};

/// One N-way K-shot task. `support[slot * shot + k]` is the k-th support
/// video of class slot `slot`; `classes[slot]` is the store class id.
struct Episode {
  std::size_t way = 0;
  std::size_t shot = 0;
  std::vector<std::uint32_t> classes;
  std::vector<std::size_t> support;
  std::vector<QueryItem> queries;

  std::span<const std::size_t> support_of(std::size_t slot) const {
    return std::span<const std::size_t>(support).subspan(slot * shot, shot);
  }
};

/// Meta-train and meta-test label spaces. Must be disjoint.
struct SplitSpec {
  std::vector<std::uint32_t> train_classes;
  std::vector<std::uint32_t> test_classes;
};

void validate(const SplitSpec& split);

/// Draws `way` classes without replacement (slots in draw order), then
/// `shot + queries_per_class` videos per class without replacement: the first
/// `shot` are support, the rest queries. Fully determined by the rng state.
Episode sample_episode(const FeatureStore& store, std::span<const std::uint32_t> classes,
                       std::size_t way, std::size_t shot, std::size_t queries_per_class,
                       CounterRng& rng);

/// The same task with slot s moved to slot perm[s] (support, queries and
/// class list follow). perm must be a permutation of [0, way).
Episode relabel_slots(const Episode& episode, std::span<const std::size_t> perm);

/// The same task with the K support videos of every slot reordered:
/// new k-th support of a slot = old perm[k]-th. perm is a permutation of [0, shot).
Episode permute_support(const Episode& episode, std::span<const std::size_t> perm);

struct ProtocolConfig {
  std::size_t way = 5;
  std::size_t shot = 1;
  std::size_t queries_per_class = 1;
  std::size_t episodes = 10000;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

/// Returns distances, row-major [queries x way]; lower means more similar.
using EpisodeScorer = std::function<std::vector<double>(const Episode&)>;

struct ProtocolResult {
  double mean_accuracy = 0.0;
  double ci95 = 0.0;
  std::vector<double> episode_accuracy;
  /// confusion[true_slot * way + predicted_slot]
  std::vector<std::uint64_t> confusion;
  std::size_t way = 0;
};

/// The random stream used for evaluation episode `index` under `seed`.
CounterRng episode_rng(std::uint64_t seed, std::uint64_t index);

/// Samples `episodes` episodes from `classes`, scores every query and reports
/// the mean per-episode accuracy with a 1.96 sigma / sqrt(E) half-width
/// (sigma is the population standard deviation). Episode i always uses
/// episode_rng(seed, i) and results are reduced in episode order, so the
/// thread count never changes the numbers.
ProtocolResult run_protocol(const FeatureStore& store, std::span<const std::uint32_t> classes,
                            const ProtocolConfig& config, const EpisodeScorer& scorer);

}  // namespace capfsar
