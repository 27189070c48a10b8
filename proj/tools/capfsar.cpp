#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "capfsar/config.hpp"
#include "capfsar/error.hpp"
#include "capfsar/featurestore.hpp"
#include "capfsar/gradsuite.hpp"
#include "capfsar/harness.hpp"
#include "capfsar/synthetic.hpp"

using namespace capfsar;

namespace {

enum class Verbosity { quiet, info, debug };

Verbosity verbosity() {
  const char* env = std::getenv("CAPFSAR_LOG");
  if (!env) return Verbosity::info;
  const std::string v = env;
  if (v == "quiet" || v == "error" || v == "0") return Verbosity::quiet;
  if (v == "debug" || v == "2") return Verbosity::debug;
  return Verbosity::info;
}

void info(const std::string& msg) {
  if (verbosity() != Verbosity::quiet) std::cerr << msg << '\n';
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::dimension: return 10;
    case ErrorKind::contract: return 11;
    case ErrorKind::degenerate_input: return 12;
    case ErrorKind::format: return 13;
    case ErrorKind::corruption: return 14;
    case ErrorKind::sampling: return 15;
    case ErrorKind::config: return 16;
    case ErrorKind::numeric: return 17;
    case ErrorKind::oracle_scope: return 18;
    case ErrorKind::io: return 19;
  }
  return 1;
}

// Command-line overrides; only options that were given touch the config.
struct RunFlags {
  std::string config_file;
  std::optional<std::string> store, train_split, test_split, checkpoint;
  std::optional<std::uint32_t> layers, heads, ffn_mult;
  std::optional<std::string> fusion, metric;
  std::optional<bool> text_temporal, bimhm_smooth_eval;
  std::optional<std::uint64_t> init_seed, seed;
  std::optional<double> otam_lambda, bimhm_lambda, lr, beta1, beta2, adam_eps;
  std::optional<std::vector<std::uint32_t>> trx_cards;
  std::optional<std::size_t> way, shot, queries, train_episodes, eval_episodes, fixed_episodes, threads;
};

void add_run_flags(CLI::App* app, RunFlags& f) {
  app->add_option("--config", f.config_file, "JSON run configuration (flags override it)");
  app->add_option("--store", f.store, "CAPF feature store");
  app->add_option("--train-split", f.train_split, "file of meta-train class ids");
  app->add_option("--test-split", f.test_split, "file of meta-test class ids");
  app->add_option("--checkpoint", f.checkpoint, "checkpoint path");
  app->add_option("--layers", f.layers, "Transformer layers per stage");
  app->add_option("--heads", f.heads, "attention heads");
  app->add_option("--ffn-mult", f.ffn_mult, "feed-forward width multiplier");
  app->add_option("--fusion", f.fusion, "cross_attention | concat | sum | visual_only");
  app->add_option("--text-temporal", f.text_temporal, "run the text temporal Transformer (true/false)");
  app->add_option("--init-seed", f.init_seed, "parameter initialisation seed (default: --seed)");
  app->add_option("--metric", f.metric, "otam | bimhm | trx | proto");
  app->add_option("--otam-lambda", f.otam_lambda, "otam smooth-min temperature");
  app->add_option("--bimhm-lambda", f.bimhm_lambda, "bimhm smooth-min temperature while training");
  app->add_option("--bimhm-smooth-eval", f.bimhm_smooth_eval, "evaluate bimhm with the smooth min");
  app->add_option("--trx-cards", f.trx_cards, "trx tuple cardinalities")->delimiter(',');
  app->add_option("--way,-N", f.way, "classes per episode");
  app->add_option("--shot,-K", f.shot, "support videos per class");
  app->add_option("--queries", f.queries, "query videos per class");
  app->add_option("--train-episodes", f.train_episodes, "training steps");
  app->add_option("--eval-episodes", f.eval_episodes, "evaluation episodes");
  app->add_option("--fixed-episodes", f.fixed_episodes, "train on this many fixed episodes (0: fresh each step)");
  app->add_option("--lr", f.lr, "Adam learning rate");
  app->add_option("--beta1", f.beta1, "Adam beta1");
  app->add_option("--beta2", f.beta2, "Adam beta2");
  app->add_option("--adam-eps", f.adam_eps, "Adam epsilon");
  app->add_option("--seed", f.seed, "episode and default initialisation seed");
  app->add_option("--threads", f.threads, "evaluation threads (0: all cores)");
}

template <typename T, typename U>
void set_if(const std::optional<T>& v, U& target) {
  if (v) target = *v;
}

RunConfig resolve(const RunFlags& f) {
  RunConfig c;
  if (!f.config_file.empty()) c = load_run_config(f.config_file);
  set_if(f.store, c.store_path);
  set_if(f.train_split, c.train_split);
  set_if(f.test_split, c.test_split);
  set_if(f.checkpoint, c.checkpoint_path);
  set_if(f.layers, c.model.layers);
  set_if(f.heads, c.model.heads);
  set_if(f.ffn_mult, c.model.ffn_mult);
  set_if(f.text_temporal, c.model.text_temporal);
  if (f.fusion) {
    const auto m = parse_fusion_mode(*f.fusion);
    if (!m) throw ConfigError("unknown fusion mode '" + *f.fusion + "'");
    c.model.fusion = *m;
  }
  if (f.metric) {
    const auto k = parse_metric_kind(*f.metric);
    if (!k) throw ConfigError("unknown metric '" + *f.metric + "'");
    c.metric.kind = *k;
  }
  set_if(f.otam_lambda, c.metric.otam_lambda);
  set_if(f.bimhm_lambda, c.metric.bimhm_lambda);
  set_if(f.bimhm_smooth_eval, c.metric.bimhm_smooth_eval);
  set_if(f.trx_cards, c.metric.trx_cardinalities);
  set_if(f.way, c.way);
  set_if(f.shot, c.shot);
  set_if(f.queries, c.queries_per_class);
  set_if(f.train_episodes, c.train_episodes);
  set_if(f.eval_episodes, c.eval_episodes);
  set_if(f.fixed_episodes, c.fixed_episodes);
  set_if(f.lr, c.adam.lr);
  set_if(f.beta1, c.adam.beta1);
  set_if(f.beta2, c.adam.beta2);
  set_if(f.adam_eps, c.adam.eps);
  set_if(f.threads, c.threads);
  if (f.seed) {
    c.seed = *f.seed;
    c.model.seed = *f.seed;
  }
  set_if(f.init_seed, c.model.seed);
  if (c.store_path.empty()) throw ConfigError("no feature store given (--store or \"store\" in --config)");
  return c;
}

// Splits from files, or the first half of the store's classes for training.
SplitSpec load_split(const RunConfig& c, const FeatureStore& store) {
  if (c.train_split.empty() != c.test_split.empty())
    throw ConfigError("give both --train-split and --test-split, or neither");
  SplitSpec s;
  if (c.train_split.empty()) {
    const auto ids = store.class_ids();
    const std::size_t half = ids.size() / 2;
    s.train_classes.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(half));
    s.test_classes.assign(ids.begin() + static_cast<std::ptrdiff_t>(half), ids.end());
    info("no split files given: " + std::to_string(s.train_classes.size()) + " train / " +
         std::to_string(s.test_classes.size()) + " test classes by id order");
  } else {
    s.train_classes = read_split(c.train_split);
    s.test_classes = read_split(c.test_split);
  }
  validate(s);
  return s;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("write failed for " + path);
}

int cmd_gen(const SyntheticSpec& spec, const std::string& out, const std::string& split_dir) {
  const auto records = gen_synthetic(spec);
  const auto parent = std::filesystem::path(out).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  const std::size_t bytes = write_store(records, out, kFlagSynthetic);
  info("wrote " + std::to_string(records.size()) + " records (" + std::to_string(bytes) + " bytes) to " + out);
  if (!split_dir.empty()) {
    std::filesystem::create_directories(split_dir);
    const ClassSplit s = halve_classes(spec.num_classes);
    write_split(std::filesystem::path(split_dir) / "train.txt", s.train);
    write_split(std::filesystem::path(split_dir) / "test.txt", s.test);
    info("wrote " + split_dir + "/train.txt and " + split_dir + "/test.txt");
  }
  return 0;
}

int cmd_train(const RunFlags& flags, const std::string& log_file) {
  RunConfig c = resolve(flags);
  const FeatureStore store = read_store(c.store_path);
  c = with_store_dims(c, store.header());
  const SplitSpec split = load_split(c, store);
  std::ofstream log_out;
  std::ostream* log = nullptr;
  if (!log_file.empty()) {
    log_out.open(log_file);
    if (!log_out) throw IoError("cannot write " + log_file);
    log = &log_out;
  } else if (verbosity() == Verbosity::debug) {
    log = &std::cerr;
  }
  const TrainResult r = train(c, store, split, log);
  std::cout << "steps " << r.steps << "  final loss " << r.final_loss << "  running accuracy "
            << r.running_accuracy << '\n';
  if (!c.checkpoint_path.empty()) info("checkpoint written to " + c.checkpoint_path);
  return 0;
}

int cmd_eval(const RunFlags& flags, const std::string& json_out) {
  RunConfig c = resolve(flags);
  if (c.checkpoint_path.empty()) throw ConfigError("eval needs --checkpoint");
  const FeatureStore store = read_store(c.store_path);
  c = with_store_dims(c, store.header());
  const SplitSpec split = load_split(c, store);
  const FewShotModel model = load_checkpoint(c.checkpoint_path);
  const EvalReport report = evaluate(c, store, split, model);
  std::cout << report_text(report);
  if (!json_out.empty()) write_text(json_out, report_json(report) + "\n");
  return 0;
}

int cmd_sweep(const RunFlags& flags, const std::string& axis_name, const std::vector<std::string>& values,
              const std::string& jsonl_out) {
  const auto axis = parse_sweep_axis(axis_name);
  if (!axis) throw ConfigError("unknown sweep axis '" + axis_name + "'");
  RunConfig c = resolve(flags);
  const FeatureStore store = read_store(c.store_path);
  const SplitSpec split = load_split(c, store);
  const SweepTable table = sweep(c, store, split, *axis, values, verbosity() == Verbosity::quiet ? nullptr : &std::cerr);
  std::cout << table.to_text();
  if (!jsonl_out.empty()) write_text(jsonl_out, table.to_jsonl());
  return table.complete() ? 0 : 3;
}

int cmd_inspect(const std::string& path, std::size_t show) {
  const FeatureStore store = read_store(path);
  const StoreHeader& h = store.header();
  std::cout << "format   CAPF v" << h.version << (h.synthetic() ? " (synthetic)" : "") << '\n'
            << "shape    T=" << h.frames << " S=" << h.tokens << " C=" << h.channels << '\n'
            << "records  " << h.record_count << '\n'
            << "classes  " << h.class_count << '\n';
  for (const auto& [cls, idx] : store.by_class()) std::cout << "  class " << cls << ": " << idx.size() << " videos\n";
  for (std::size_t i = 0; i < std::min(show, store.size()); ++i) {
    const FeatureRecord& r = store.record(i);
    std::cout << r.video_id << "  class " << r.class_id << "  caption[0] \""
              << (r.captions.empty() ? "" : r.captions.front()) << "\"\n";
  }
  return 0;
}

int cmd_gradcheck(std::uint64_t suite_seed, std::uint64_t draws, double tol) {
  double worst = 0;
  std::uint64_t failed = 0;
  for (std::uint64_t i = 0; i < draws; ++i) {
    const GradCase gc = grad_case(suite_seed, i);
    const GradCheckReport r = grad_check_case(gc);
    worst = std::max(worst, r.max_rel_error);
    const bool ok = r.max_rel_error <= tol;
    failed += ok ? 0 : 1;
    std::cout << (ok ? "ok   " : "FAIL ") << i << "  " << describe(gc) << "  max rel " << r.max_rel_error;
    if (!ok) std::cout << "  at " << r.worst_tensor << "[" << r.worst_index << "]";
    std::cout << '\n';
  }
  std::cout << draws - failed << "/" << draws << " draws within " << tol << ", worst " << worst << '\n';
  return failed ? 3 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CapFSAR few-shot action recognition engine"};
  app.require_subcommand(1);

  SyntheticSpec spec;
  std::string gen_out, split_dir;
  auto* gen = app.add_subcommand("gen-synthetic", "write a synthetic CAPF store");
  gen->add_option("--out", gen_out, "output store path")->required();
  gen->add_option("--classes", spec.num_classes, "number of classes");
  gen->add_option("--videos", spec.videos_per_class, "videos per class");
  gen->add_option("--frames", spec.frames, "frames T");
  gen->add_option("--tokens", spec.tokens, "visual tokens S");
  gen->add_option("--channels", spec.channels, "channels C");
  gen->add_option("--visual-snr", spec.visual_snr, "visual class signal");
  gen->add_option("--text-snr", spec.text_snr, "text class signal");
  gen->add_option("--drift", spec.drift, "per-video temporal drift scale");
  gen->add_option("--seed", spec.seed, "generator seed");
  gen->add_option("--splits", split_dir, "also write train.txt / test.txt (class halves) here");

  RunFlags train_flags, eval_flags, sweep_flags;
  std::string log_file, json_out, jsonl_out, axis;
  std::vector<std::string> values;
  auto* tr = app.add_subcommand("train", "episodic training");
  add_run_flags(tr, train_flags);
  tr->add_option("--log-file", log_file, "per-step JSON lines");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the test classes");
  add_run_flags(ev, eval_flags);
  ev->add_option("--json", json_out, "also write the JSON report here");

  auto* sw = app.add_subcommand("sweep", "train and evaluate once per axis value");
  add_run_flags(sw, sweep_flags);
  sw->add_option("--axis", axis, "fusion_mode | L | T | N | metric | text_temporal")->required();
  sw->add_option("--values", values, "comma-separated values")->required()->delimiter(',');
  sw->add_option("--jsonl", jsonl_out, "also write one JSON object per row here");

  std::string inspect_path;
  std::size_t show = 5;
  auto* in = app.add_subcommand("inspect-store", "validate a store and print its summary");
  in->add_option("store", inspect_path, "CAPF store")->required();
  in->add_option("--show", show, "records to list");

  std::uint64_t suite_seed = 0, draws = 50;
  double tol = 1e-4;
  auto* gc = app.add_subcommand("gradcheck", "randomized end-to-end gradient check");
  gc->add_option("--suite-seed", suite_seed, "suite seed");
  gc->add_option("--draws", draws, "number of random (config, input) draws");
  gc->add_option("--tol", tol, "maximum relative error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen) return cmd_gen(spec, gen_out, split_dir);
    if (*tr) return cmd_train(train_flags, log_file);
    if (*ev) return cmd_eval(eval_flags, json_out);
    if (*sw) return cmd_sweep(sweep_flags, axis, values, jsonl_out);
    if (*in) return cmd_inspect(inspect_path, show);
    if (*gc) return cmd_gradcheck(suite_seed, draws, tol);
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.kind()) << "]: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
