#pragma once

#include <filesystem>
#include <string>

#include "capfsar/harness.hpp"

namespace capfsar {

/// Overlays a JSON object onto `base`. Recognised keys:
///   store, train_split, test_split, checkpoint,
///   way, shot, queries_per_class, train_episodes, eval_episodes, fixed_episodes,
///   lr, beta1, beta2, adam_eps, seed, threads,
///   model: {layers, channels, heads, ffn_mult, frames, tokens, fusion, text_temporal, seed},
///   metric: {kind, otam_lambda, bimhm_lambda, bimhm_smooth_eval, trx_cardinalities}
/// A top-level "seed" also seeds the model unless model.seed is given.
/// Unknown keys and wrongly typed values are ConfigErrors.
RunConfig parse_run_config(const std::string& json_text, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});

/// Inverse of parse_run_config (all keys written).
std::string run_config_json(const RunConfig& config);

}  // namespace capfsar
