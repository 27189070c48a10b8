#include "capfsar/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "capfsar/error.hpp"
#include "capfsar/ops.hpp"

namespace capfsar {

using nlohmann::json;

void validate(const RunConfig& c) {
  validate(c.model);
  validate(c.metric);
  if (c.way < 2) throw ConfigError("way must be >= 2");
  if (c.shot < 1) throw ConfigError("shot must be >= 1");
  if (c.queries_per_class < 1) throw ConfigError("queries_per_class must be >= 1");
  if (c.eval_episodes < 1) throw ConfigError("eval_episodes must be >= 1");
  if (!(c.adam.lr >= 0.0)) throw ConfigError("lr must be >= 0");
  if (!(c.adam.beta1 >= 0.0 && c.adam.beta1 < 1.0 && c.adam.beta2 >= 0.0 && c.adam.beta2 < 1.0)) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (!(c.adam.eps > 0.0)) throw ConfigError("adam eps must be > 0");
}

RunConfig with_store_dims(RunConfig config, const StoreHeader& header) {
  config.model.frames = header.frames;
  config.model.tokens = header.tokens;
  config.model.channels = header.channels;
  return config;
}

CounterRng train_episode_rng(std::uint64_t seed, std::uint64_t index) {
  return CounterRng(seed, CounterRng::stream_id({0x5452414eULL, index}));
}

std::vector<Episode> fixed_training_episodes(const RunConfig& config, const FeatureStore& store,
                                             const SplitSpec& split) {
  std::vector<Episode> out;
  out.reserve(config.fixed_episodes);
  for (std::size_t i = 0; i < config.fixed_episodes; ++i) {
    CounterRng rng = train_episode_rng(config.seed, i);
    out.push_back(sample_episode(store, split.train_classes, config.way, config.shot,
                                 config.queries_per_class, rng));
  }
  return out;
}

double episodes_accuracy(const std::vector<Episode>& episodes, const FeatureStore& store,
                         const FewShotModel& model) {
  NoGradGuard no_grad;
  std::size_t correct = 0, total = 0;
  for (const Episode& ep : episodes) {
    correct += count_correct(score_episode(ep, store, model, Phase::eval));
    total += ep.queries.size();
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

TrainResult train(const RunConfig& config, const FeatureStore& store, const SplitSpec& split,
                  std::ostream* log) {
  return train(config, store, split, FewShotModel(config.model, config.metric), log);
}

TrainResult train(const RunConfig& config, const FeatureStore& store, const SplitSpec& split,
                  FewShotModel model, std::ostream* log, const StepHook& hook) {
  validate(config);
  validate(split);
  check_compatible(model, store.header());
  const std::vector<Episode> fixed = fixed_training_episodes(config, store, split);

  ParamSet params = model.parameters();
  AdamState state;
  std::deque<std::pair<std::size_t, std::size_t>> window;  // (correct, queries) per step
  std::size_t win_correct = 0, win_total = 0;
  TrainResult result{model, 0, 0.0, 0.0};

  for (std::size_t step = 0; step < config.train_episodes; ++step) {
    Episode ep;
    if (fixed.empty()) {
      CounterRng rng = train_episode_rng(config.seed, step);
      ep = sample_episode(store, split.train_classes, config.way, config.shot, config.queries_per_class, rng);
    } else {
      ep = fixed[step % fixed.size()];
    }
    params.zero_grad();
    const EpisodeScores scores = score_episode(ep, store, model, Phase::train);
    const Tensor loss = distance_loss(scores.distances, scores.targets);
    const double loss_value = loss.item();
    if (!std::isfinite(loss_value)) {
      const std::size_t episode_index = fixed.empty() ? step : step % fixed.size();
      throw NumericError("non-finite loss at step " + std::to_string(step) + " (episode seed " +
                         std::to_string(config.seed) + ", episode index " +
                         std::to_string(episode_index) + ")");
    }
    backward(loss);
    for (const Tensor& t : params.tensors()) {
      for (double g : t.grad()) {
        if (!std::isfinite(g)) {
          throw NumericError("non-finite gradient at step " + std::to_string(step) + " (episode seed " +
                             std::to_string(config.seed) + ")");
        }
      }
    }
    adam_step(params.tensors(), state, config.adam);

    const std::size_t correct = count_correct(scores);
    window.emplace_back(correct, ep.queries.size());
    win_correct += correct;
    win_total += ep.queries.size();
    if (window.size() > 50) {
      win_correct -= window.front().first;
      win_total -= window.front().second;
      window.pop_front();
    }
    result.steps = step + 1;
    result.final_loss = loss_value;
    result.running_accuracy = static_cast<double>(win_correct) / static_cast<double>(win_total);
    if (log) {
      *log << json{{"step", step}, {"loss", loss_value}, {"running_accuracy", result.running_accuracy}}.dump()
           << '\n';
    }
    if (hook && !hook(result.steps, result.model)) break;
  }
  params.zero_grad();
  if (!config.checkpoint_path.empty()) save_checkpoint(result.model, config.checkpoint_path);
  return result;
}

EpisodeScorer model_scorer(const FeatureStore& store, const FewShotModel& model) {
  return [&store, &model](const Episode& ep) {
    NoGradGuard no_grad;
    const EpisodeScores s = score_episode(ep, store, model, Phase::eval);
    return std::vector<double>(s.distances.values().begin(), s.distances.values().end());
  };
}

EvalReport evaluate(const RunConfig& config, const FeatureStore& store, const SplitSpec& split,
                    const FewShotModel& model) {
  validate(config);
  validate(split);
  check_compatible(model, store.header());
  const ModelConfig& mc = model.model_config();
  if (mc.frames != config.model.frames || mc.tokens != config.model.tokens ||
      mc.channels != config.model.channels) {
    throw ConfigError("checkpoint widths (T=" + std::to_string(mc.frames) + " S=" + std::to_string(mc.tokens) +
                      " C=" + std::to_string(mc.channels) + ") do not match the run configuration (T=" +
                      std::to_string(config.model.frames) + " S=" + std::to_string(config.model.tokens) +
                      " C=" + std::to_string(config.model.channels) + ")");
  }
  ProtocolConfig pc;
  pc.way = config.way;
  pc.shot = config.shot;
  pc.queries_per_class = config.queries_per_class;
  pc.episodes = config.eval_episodes;
  pc.seed = config.seed;
  pc.threads = config.threads ? config.threads : std::max(1u, std::thread::hardware_concurrency());

  const auto start = std::chrono::steady_clock::now();
  EvalReport report;
  report.result = run_protocol(store, split.test_classes, pc, model_scorer(store, model));
  report.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  report.metric = to_string(model.metric_config().kind);
  report.fusion = to_string(model.model_config().fusion);
  report.way = config.way;
  report.shot = config.shot;
  report.episodes = config.eval_episodes;
  return report;
}

std::string report_json(const EvalReport& r) {
  json j;
  j["metric"] = r.metric;
  j["fusion"] = r.fusion;
  j["way"] = r.way;
  j["shot"] = r.shot;
  j["episodes"] = r.episodes;
  j["mean_accuracy"] = r.result.mean_accuracy;
  j["ci95"] = r.result.ci95;
  json rows = json::array();
  for (std::size_t t = 0; t < r.result.way; ++t) {
    json row = json::array();
    for (std::size_t p = 0; p < r.result.way; ++p) row.push_back(r.result.confusion[t * r.result.way + p]);
    rows.push_back(row);
  }
  j["confusion"] = rows;
  return j.dump();
}

std::string report_text(const EvalReport& r) {
  std::ostringstream os;
  os << r.way << "-way " << r.shot << "-shot, " << r.episodes << " episodes, metric=" << r.metric
     << ", fusion=" << r.fusion << '\n';
  os << std::fixed << std::setprecision(2) << "accuracy: " << 100.0 * r.result.mean_accuracy << "% +- "
     << 100.0 * r.result.ci95 << "%\n";
  os << "confusion (rows: true slot, cols: predicted slot)\n";
  for (std::size_t t = 0; t < r.result.way; ++t) {
    os << "  " << std::setw(2) << t << ":";
    for (std::size_t p = 0; p < r.result.way; ++p) os << ' ' << std::setw(7) << r.result.confusion[t * r.result.way + p];
    os << '\n';
  }
  os << std::setprecision(3) << "wall time: " << r.wall_time_s << " s\n";
  return os.str();
}

const char* to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::fusion_mode: return "fusion_mode";
    case SweepAxis::layers: return "L";
    case SweepAxis::frames: return "T";
    case SweepAxis::way: return "N";
    case SweepAxis::metric: return "metric";
    case SweepAxis::text_temporal: return "text_temporal";
  }
  return "unknown";
}

std::optional<SweepAxis> parse_sweep_axis(const std::string& name) {
  for (SweepAxis a : {SweepAxis::fusion_mode, SweepAxis::layers, SweepAxis::frames, SweepAxis::way,
                      SweepAxis::metric, SweepAxis::text_temporal}) {
    if (name == to_string(a)) return a;
  }
  if (name == "layers") return SweepAxis::layers;
  if (name == "frames") return SweepAxis::frames;
  if (name == "way") return SweepAxis::way;
  return std::nullopt;
}

namespace {

std::uint32_t parse_positive(const std::string& v, const char* axis) {
  std::size_t used = 0;
  long long n = -1;
  try {
    n = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || n < 1 || n > 1'000'000) {
    throw ConfigError(std::string("sweep ") + axis + ": '" + v + "' is not a positive integer");
  }
  return static_cast<std::uint32_t>(n);
}

bool parse_bool(const std::string& v) {
  if (v == "on" || v == "true" || v == "1" || v == "with") return true;
  if (v == "off" || v == "false" || v == "0" || v == "without") return false;
  throw ConfigError("sweep text_temporal: '" + v + "' is not on/off");
}

// Applies one sweep value to a copy of the base configuration.
RunConfig apply_value(RunConfig c, SweepAxis axis, const std::string& v, const StoreHeader& header) {
  switch (axis) {
    case SweepAxis::fusion_mode: {
      const auto m = parse_fusion_mode(v);
      if (!m) throw ConfigError("sweep fusion_mode: unknown mode '" + v + "'");
      c.model.fusion = *m;
      break;
    }
    case SweepAxis::layers:
      c.model.layers = parse_positive(v, "L");
      break;
    case SweepAxis::frames: {
      const std::uint32_t t = parse_positive(v, "T");
      if (t > header.frames) {
        throw ConfigError("sweep T: " + v + " exceeds the store's " + std::to_string(header.frames) + " frames");
      }
      c.model.frames = t;
      break;
    }
    case SweepAxis::way: {
      const std::uint32_t n = parse_positive(v, "N");
      if (n < 2) throw ConfigError("sweep N: way must be >= 2");
      c.way = n;
      break;
    }
    case SweepAxis::metric: {
      const auto k = parse_metric_kind(v);
      if (!k) throw ConfigError("sweep metric: unknown metric '" + v + "'");
      c.metric.kind = *k;
      break;
    }
    case SweepAxis::text_temporal:
      c.model.text_temporal = parse_bool(v);
      break;
  }
  return c;
}

}  // namespace

SweepTable sweep(const RunConfig& base, const FeatureStore& store, const SplitSpec& split, SweepAxis axis,
                 std::span<const std::string> values, std::ostream* log) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  const RunConfig dims = with_store_dims(base, store.header());
  std::vector<RunConfig> configs;
  for (const std::string& v : values) {
    RunConfig c = apply_value(dims, axis, v, store.header());
    validate(c);
    configs.push_back(std::move(c));
  }

  SweepTable table;
  table.axis = axis;
  for (std::size_t i = 0; i < values.size(); ++i) {
    SweepRow row;
    row.value = values[i];
    RunConfig c = configs[i];
    c.checkpoint_path.clear();
    try {
      const FeatureStore cell_store =
          axis == SweepAxis::frames ? subsample_frames(store, c.model.frames) : store;
      const TrainResult trained = train(c, cell_store, split, nullptr);
      const EvalReport report = evaluate(c, cell_store, split, trained.model);
      row.ok = true;
      row.accuracy = report.result.mean_accuracy;
      row.ci95 = report.result.ci95;
      row.final_loss = trained.final_loss;
    } catch (const std::exception& e) {
      row.ok = false;
      row.error = e.what();
    }
    if (log) *log << to_string(axis) << '=' << row.value << (row.ok ? " done" : " FAILED: " + row.error) << '\n';
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::string SweepTable::to_text() const {
  std::ostringstream os;
  const std::string head = to_string(axis);
  std::size_t width = head.size();
  for (const SweepRow& r : rows) width = std::max(width, r.value.size());
  os << std::left << std::setw(static_cast<int>(width)) << head << "  accuracy   ci95     loss\n";
  for (const SweepRow& r : rows) {
    os << std::left << std::setw(static_cast<int>(width)) << r.value << "  ";
    if (r.ok) {
      os << std::right << std::fixed << std::setprecision(2) << std::setw(7) << 100.0 * r.accuracy << "%  "
         << std::setw(5) << 100.0 * r.ci95 << "%  " << std::setprecision(4) << std::setw(7) << r.final_loss;
    } else {
      os << "FAILED: " << r.error;
    }
    os << '\n';
  }
  return os.str();
}

std::string SweepTable::to_jsonl() const {
  std::string out;
  for (const SweepRow& r : rows) {
    json j{{"axis", to_string(axis)}, {"value", r.value}, {"ok", r.ok}};
    if (r.ok) {
      j["accuracy"] = r.accuracy;
      j["ci95"] = r.ci95;
      j["final_loss"] = r.final_loss;
    } else {
      j["error"] = r.error;
    }
    out += j.dump() + '\n';
  }
  return out;
}

bool SweepTable::complete() const {
  return !rows.empty() && std::all_of(rows.begin(), rows.end(), [](const SweepRow& r) { return r.ok; });
}

}  // namespace capfsar
