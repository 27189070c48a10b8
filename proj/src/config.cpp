#include "capfsar/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "capfsar/error.hpp"

namespace capfsar {

using nlohmann::json;

namespace {

template <typename T>
T get_as(const json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: '" + key + "' has the wrong type");
  }
}

std::size_t get_count(const json& j, const std::string& key) {
  if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<long long>() >= 0))
    throw ConfigError("config: '" + key + "' must be a non-negative integer");
  return j.get<std::size_t>();
}

std::uint32_t get_u32(const json& j, const std::string& key) {
  const std::size_t v = get_count(j, key);
  if (v > 0xFFFFFFFFu) throw ConfigError("config: '" + key + "' is out of range");
  return static_cast<std::uint32_t>(v);
}

double get_number(const json& j, const std::string& key) {
  if (!j.is_number()) throw ConfigError("config: '" + key + "' must be a number");
  return j.get<double>();
}

void apply_model(const json& j, ModelConfig& m) {
  if (!j.is_object()) throw ConfigError("config: 'model' must be an object");
  for (const auto& [key, v] : j.items()) {
    const std::string k = "model." + key;
    if (key == "layers") m.layers = get_u32(v, k);
    else if (key == "channels") m.channels = get_u32(v, k);
    else if (key == "heads") m.heads = get_u32(v, k);
    else if (key == "ffn_mult") m.ffn_mult = get_u32(v, k);
    else if (key == "frames") m.frames = get_u32(v, k);
    else if (key == "tokens") m.tokens = get_u32(v, k);
    else if (key == "seed") m.seed = get_count(v, k);
    else if (key == "text_temporal") m.text_temporal = get_as<bool>(v, k);
    else if (key == "fusion") {
      const auto mode = parse_fusion_mode(get_as<std::string>(v, k));
      if (!mode) throw ConfigError("config: unknown fusion mode '" + v.get<std::string>() + "'");
      m.fusion = *mode;
    } else {
      throw ConfigError("config: unknown key '" + k + "'");
    }
  }
}

void apply_metric(const json& j, MetricConfig& m) {
  if (!j.is_object()) throw ConfigError("config: 'metric' must be an object");
  for (const auto& [key, v] : j.items()) {
    const std::string k = "metric." + key;
    if (key == "kind") {
      const auto kind = parse_metric_kind(get_as<std::string>(v, k));
      if (!kind) throw ConfigError("config: unknown metric '" + v.get<std::string>() + "'");
      m.kind = *kind;
    } else if (key == "otam_lambda") m.otam_lambda = get_number(v, k);
    else if (key == "bimhm_lambda") m.bimhm_lambda = get_number(v, k);
    else if (key == "bimhm_smooth_eval") m.bimhm_smooth_eval = get_as<bool>(v, k);
    else if (key == "trx_cardinalities") {
      if (!v.is_array()) throw ConfigError("config: '" + k + "' must be an array");
      m.trx_cardinalities.clear();
      for (const json& c : v) m.trx_cardinalities.push_back(get_u32(c, k));
    } else {
      throw ConfigError("config: unknown key '" + k + "'");
    }
  }
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text, RunConfig base) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  bool model_seed_given = j.contains("model") && j["model"].is_object() && j["model"].contains("seed");
  for (const auto& [key, v] : j.items()) {
    if (key == "store") base.store_path = get_as<std::string>(v, key);
    else if (key == "train_split") base.train_split = get_as<std::string>(v, key);
    else if (key == "test_split") base.test_split = get_as<std::string>(v, key);
    else if (key == "checkpoint") base.checkpoint_path = get_as<std::string>(v, key);
    else if (key == "way") base.way = get_count(v, key);
    else if (key == "shot") base.shot = get_count(v, key);
    else if (key == "queries_per_class") base.queries_per_class = get_count(v, key);
    else if (key == "train_episodes") base.train_episodes = get_count(v, key);
    else if (key == "eval_episodes") base.eval_episodes = get_count(v, key);
    else if (key == "fixed_episodes") base.fixed_episodes = get_count(v, key);
    else if (key == "lr") base.adam.lr = get_number(v, key);
    else if (key == "beta1") base.adam.beta1 = get_number(v, key);
    else if (key == "beta2") base.adam.beta2 = get_number(v, key);
    else if (key == "adam_eps") base.adam.eps = get_number(v, key);
    else if (key == "threads") base.threads = get_count(v, key);
    else if (key == "seed") base.seed = get_count(v, key);
    else if (key == "model") apply_model(v, base.model);
    else if (key == "metric") apply_metric(v, base.metric);
    else throw ConfigError("config: unknown key '" + key + "'");
  }
  if (j.contains("seed") && !model_seed_given) base.model.seed = base.seed;
  return base;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str(), std::move(base));
}

std::string run_config_json(const RunConfig& c) {
  json j{{"store", c.store_path},
         {"train_split", c.train_split},
         {"test_split", c.test_split},
         {"checkpoint", c.checkpoint_path},
         {"way", c.way},
         {"shot", c.shot},
         {"queries_per_class", c.queries_per_class},
         {"train_episodes", c.train_episodes},
         {"eval_episodes", c.eval_episodes},
         {"fixed_episodes", c.fixed_episodes},
         {"lr", c.adam.lr},
         {"beta1", c.adam.beta1},
         {"beta2", c.adam.beta2},
         {"adam_eps", c.adam.eps},
         {"seed", c.seed},
         {"threads", c.threads}};
  j["model"] = json{{"layers", c.model.layers},     {"channels", c.model.channels},
                    {"heads", c.model.heads},       {"ffn_mult", c.model.ffn_mult},
                    {"frames", c.model.frames},     {"tokens", c.model.tokens},
                    {"fusion", to_string(c.model.fusion)}, {"text_temporal", c.model.text_temporal},
                    {"seed", c.model.seed}};
  j["metric"] = json{{"kind", to_string(c.metric.kind)},
                     {"otam_lambda", c.metric.otam_lambda},
                     {"bimhm_lambda", c.metric.bimhm_lambda},
                     {"bimhm_smooth_eval", c.metric.bimhm_smooth_eval},
                     {"trx_cardinalities", c.metric.trx_cardinalities}};
  return j.dump(2);
}

}  // namespace capfsar
