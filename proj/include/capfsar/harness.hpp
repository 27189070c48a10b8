#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "capfsar/episodes.hpp"
#include "capfsar/model.hpp"
#include "capfsar/optim.hpp"

namespace capfsar {

struct RunConfig {
  std::string store_path;
  std::string train_split;
  std::string test_split;
  std::string checkpoint_path;

  ModelConfig model;
  MetricConfig metric;

  std::size_t way = 5;
  std::size_t shot = 1;
  std::size_t queries_per_class = 1;
  std::size_t train_episodes = 2000;
  std::size_t eval_episodes = 10000;
  /// When > 0, training cycles through this many pre-sampled episodes.
  std::size_t fixed_episodes = 0;
  AdamOptions adam;
  std::uint64_t seed = 0;
  /// Evaluation worker threads; 0 picks the hardware concurrency.
  std::size_t threads = 1;
};

void validate(const RunConfig& config);

/// Copies T, S and C from the store header into the model configuration.
RunConfig with_store_dims(RunConfig config, const StoreHeader& header);

struct TrainResult {
  FewShotModel model;
  std::size_t steps = 0;
  double final_loss = 0.0;
  /// Fraction of correctly classified queries over the last (up to) 50 steps.
  double running_accuracy = 0.0;
};

/// Episodic training with Adam. Episode i is drawn from the train classes with
/// train_episode_rng(seed, i) (or, with fixed_episodes, episode i mod F).
/// One line of JSON per step goes to `log` when it is non-null. Aborts with a
/// NumericError naming the step and episode seed when the loss is not finite.
TrainResult train(const RunConfig& config, const FeatureStore& store, const SplitSpec& split,
                  std::ostream* log = nullptr);
/// Called after every optimizer step with the number of completed steps;
/// returning false ends training early.
using StepHook = std::function<bool(std::size_t steps, const FewShotModel& model)>;

TrainResult train(const RunConfig& config, const FeatureStore& store, const SplitSpec& split,
                  FewShotModel initial, std::ostream* log = nullptr, const StepHook& hook = {});

CounterRng train_episode_rng(std::uint64_t seed, std::uint64_t index);

/// The F fixed training episodes used when fixed_episodes = F.
std::vector<Episode> fixed_training_episodes(const RunConfig& config, const FeatureStore& store,
                                             const SplitSpec& split);

/// Fraction of queries classified correctly over a list of episodes.
double episodes_accuracy(const std::vector<Episode>& episodes, const FeatureStore& store,
                         const FewShotModel& model);

struct EvalReport {
  std::string metric;
  std::string fusion;
  std::size_t way = 0;
  std::size_t shot = 0;
  std::size_t episodes = 0;
  ProtocolResult result;
  double wall_time_s = 0.0;
};

/// Runs the episodic protocol over the test classes with frozen parameters.
EvalReport evaluate(const RunConfig& config, const FeatureStore& store, const SplitSpec& split,
                    const FewShotModel& model);

/// Scorer that runs the model without recording gradients.
EpisodeScorer model_scorer(const FeatureStore& store, const FewShotModel& model);

/// Machine-readable report: one JSON object, no timing, so identical inputs
/// give identical bytes.
std::string report_json(const EvalReport& report);
/// Human-readable summary including the confusion matrix and wall time.
std::string report_text(const EvalReport& report);

enum class SweepAxis { fusion_mode, layers, frames, way, metric, text_temporal };

const char* to_string(SweepAxis axis);
std::optional<SweepAxis> parse_sweep_axis(const std::string& name);

struct SweepRow {
  std::string value;
  bool ok = false;
  std::string error;
  double accuracy = 0.0;
  double ci95 = 0.0;
  double final_loss = 0.0;
};

struct SweepTable {
  SweepAxis axis = SweepAxis::fusion_mode;
  std::vector<SweepRow> rows;

  std::string to_text() const;
  /// One JSON object per row.
  std::string to_jsonl() const;
  bool complete() const;
};

/// Trains and evaluates once per value with the base seed. Values are checked
/// up front (ConfigError); failures inside a cell are recorded in that row.
/// The frames axis subsamples the store's frames uniformly.
SweepTable sweep(const RunConfig& base, const FeatureStore& store, const SplitSpec& split, SweepAxis axis,
                 std::span<const std::string> values, std::ostream* log = nullptr);

}  // namespace capfsar
