#include "capfsar/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "capfsar/error.hpp"
#include "capfsar/ops.hpp"

namespace capfsar {

namespace {

constexpr std::size_t kBruteForceLimit = 8;

void check_features(const Tensor& x, const char* what) {
  if (x.rank() != 2) throw DimensionError(std::string(what) + ": expected [T x C], got " + shape_str(x.shape()));
}

double path_search(std::span<const double> d, std::size_t rows, std::size_t cols, std::size_t row,
                   std::size_t col, double acc) {
  acc += d[row * cols + col];
  if (row + 1 == rows) return acc;
  double best = path_search(d, rows, cols, row + 1, col, acc);
  if (col + 1 < cols) best = std::min(best, path_search(d, rows, cols, row + 1, col + 1, acc));
  return best;
}

std::string trx_prefix(std::uint32_t card) { return "trx." + std::to_string(card); }

Tensor project_tuples(const Tensor& video, std::size_t card, const ParamSet& p) {
  const std::size_t frames = video.dim(0), c = video.dim(1);
  const auto tuples = frame_tuples(frames, card);
  std::vector<std::size_t> rows;
  rows.reserve(tuples.size() * card);
  for (const auto& t : tuples) rows.insert(rows.end(), t.begin(), t.end());
  const Tensor stacked = reshape(gather_rows(video, rows), {tuples.size(), card * c});
  const std::string pre = trx_prefix(static_cast<std::uint32_t>(card));
  return add_bias(matmul(stacked, p.get(pre + ".proj.w")), p.get(pre + ".proj.b"));
}

}  // namespace

const char* to_string(MetricKind kind) {
  switch (kind) {
    case MetricKind::otam: return "otam";
    case MetricKind::trx: return "trx";
    case MetricKind::bimhm: return "bimhm";
    case MetricKind::proto: return "proto";
  }
  return "unknown";
}

std::optional<MetricKind> parse_metric_kind(const std::string& name) {
  for (MetricKind k : {MetricKind::otam, MetricKind::trx, MetricKind::bimhm, MetricKind::proto}) {
    if (name == to_string(k)) return k;
  }
  return std::nullopt;
}

void validate(const MetricConfig& c) {
  if (!(c.otam_lambda >= 0.0) || !(c.bimhm_lambda >= 0.0)) {
    throw ConfigError("metric: lambda values must be >= 0");
  }
  if (c.kind == MetricKind::trx) {
    if (c.trx_cardinalities.empty()) throw ConfigError("metric: trx needs at least one cardinality");
    for (std::uint32_t w : c.trx_cardinalities) {
      if (w != 2 && w != 3) throw ConfigError("metric: trx cardinalities must be 2 or 3");
    }
    auto sorted = c.trx_cardinalities;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw ConfigError("metric: duplicate trx cardinality");
    }
  }
}

Tensor frame_distance_matrix(const Tensor& q, const Tensor& s) {
  check_features(q, "frame_distance_matrix");
  check_features(s, "frame_distance_matrix");
  if (q.dim(1) != s.dim(1)) {
    throw DimensionError("frame_distance_matrix: widths differ, " + shape_str(q.shape()) + " vs " +
                         shape_str(s.shape()));
  }
  const Tensor cosines = matmul(row_normalize(q), transpose(row_normalize(s)));
  return add_scalar(scale(cosines, -1.0), 1.0);
}

double dtw_bruteforce(const Tensor& cost) {
  if (cost.rank() != 2) throw DimensionError("dtw_bruteforce: expected a matrix");
  const std::size_t rows = cost.dim(0), cols = cost.dim(1);
  if (rows > kBruteForceLimit || cols > kBruteForceLimit) {
    throw OracleScopeError("dtw_bruteforce: " + shape_str(cost.shape()) + " exceeds the " +
                           std::to_string(kBruteForceLimit) + "x" + std::to_string(kBruteForceLimit) +
                           " enumeration bound");
  }
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t start = 0; start < cols; ++start)
    best = std::min(best, path_search(cost.values(), rows, cols, 0, start, 0.0));
  return best;
}

Tensor otam_distance(const Tensor& cost, double lambda) { return soft_dtw_relaxed(cost, lambda); }

Tensor bimhm_from_costs(const Tensor& cost, double lambda) {
  if (cost.rank() != 2) throw DimensionError("bimhm: expected a cost matrix");
  const Tensor query_side = mean(soft_min(cost, 1, lambda));
  const Tensor support_side = mean(soft_min(cost, 0, lambda));
  return add(query_side, support_side);
}

Tensor bimhm_distance(const Tensor& q, const Tensor& s, double lambda) {
  return bimhm_from_costs(frame_distance_matrix(q, s), lambda);
}

Tensor proto_distance(const Tensor& q, const Tensor& s) {
  check_features(q, "proto_distance");
  check_features(s, "proto_distance");
  const Tensor qm = reshape(mean_axis(q, 0), {1, q.dim(1)});
  const Tensor sm = reshape(mean_axis(s, 0), {1, s.dim(1)});
  return reshape(frame_distance_matrix(qm, sm), {1});
}

std::vector<std::vector<std::size_t>> frame_tuples(std::size_t frames, std::size_t card) {
  std::vector<std::vector<std::size_t>> out;
  if (card == 0 || card > frames) return out;
  std::vector<std::size_t> idx(card);
  for (std::size_t i = 0; i < card; ++i) idx[i] = i;
  for (;;) {
    out.push_back(idx);
    std::size_t pos = card;
    while (pos > 0 && idx[pos - 1] == frames - card + pos - 1) --pos;
    if (pos == 0) break;
    ++idx[pos - 1];
    for (std::size_t i = pos; i < card; ++i) idx[i] = idx[i - 1] + 1;
  }
  return out;
}

void add_trx_params(ParamSet& params, std::size_t channels, std::span<const std::uint32_t> cardinalities,
                    std::uint64_t seed) {
  for (std::uint32_t card : cardinalities) {
    const std::string pre = trx_prefix(card);
    auto init = [&](const std::string& name, std::size_t fan_in, std::size_t fan_out) {
      params.add(name, seeded_uniform(seed, name, fan_in, fan_out));
    };
    init(pre + ".proj.w", card * channels, channels);
    params.add(pre + ".proj.b", Tensor::zeros({channels}));
    init(pre + ".wq", channels, channels);
    init(pre + ".wk", channels, channels);
    init(pre + ".wv", channels, channels);
  }
}

Tensor trx_distance(const Tensor& q, std::span<const Tensor> supports, const ParamSet& params,
                    std::span<const std::uint32_t> cardinalities) {
  check_features(q, "trx_distance");
  if (supports.empty()) throw DimensionError("trx_distance: no support videos");
  if (cardinalities.empty()) throw ConfigError("trx_distance: no cardinalities");
  const std::size_t max_card = *std::max_element(cardinalities.begin(), cardinalities.end());
  for (const Tensor& s : supports) {
    check_features(s, "trx_distance");
    if (s.shape() != q.shape()) {
      throw DimensionError("trx_distance: support " + shape_str(s.shape()) + " differs from query " +
                           shape_str(q.shape()));
    }
  }
  if (q.dim(0) < max_card) {
    throw DimensionError("trx_distance: " + std::to_string(q.dim(0)) +
                         " frames cannot form tuples of size " + std::to_string(max_card));
  }

  std::vector<Tensor> per_card;
  for (std::uint32_t card : cardinalities) {
    const std::string pre = trx_prefix(card);
    const Tensor query_tuples = project_tuples(q, card, params);
    std::vector<Tensor> pooled;
    pooled.reserve(supports.size());
    for (const Tensor& s : supports) pooled.push_back(project_tuples(s, card, params));
    const Tensor support_tuples = pooled.size() == 1 ? pooled.front() : concat(pooled, 0);

    const Tensor qk = matmul(query_tuples, params.get(pre + ".wq"));
    const Tensor sk = matmul(support_tuples, params.get(pre + ".wk"));
    const Tensor sv = matmul(support_tuples, params.get(pre + ".wv"));
    const Tensor qv = matmul(query_tuples, params.get(pre + ".wv"));
    const Tensor reconstruction = scaled_dot_attention(qk, sk, sv);
    const double per_tuple = 1.0 / static_cast<double>(query_tuples.dim(0));
    per_card.push_back(scale(sum(square(sub(qv, reconstruction))), per_tuple));
  }
  const Tensor total = per_card.size() == 1 ? per_card.front() : sum(concat(per_card, 0));
  return scale(total, 1.0 / static_cast<double>(per_card.size()));
}

ClassSupport fuse_support(std::span<const Tensor> videos, MetricKind kind) {
  if (videos.empty()) throw DimensionError("fuse_support: need at least one support video");
  for (const Tensor& v : videos) {
    check_features(v, "fuse_support");
    if (v.shape() != videos.front().shape()) {
      throw DimensionError("fuse_support: heterogeneous shapes " + shape_str(v.shape()) + " and " +
                           shape_str(videos.front().shape()));
    }
  }
  ClassSupport out;
  out.kind = kind;
  switch (kind) {
    case MetricKind::otam:
    case MetricKind::proto: {
      if (videos.size() == 1) {
        out.videos.push_back(videos.front());
        break;
      }
      Tensor total = videos.front();
      for (std::size_t k = 1; k < videos.size(); ++k) total = add(total, videos[k]);
      out.videos.push_back(scale(total, 1.0 / static_cast<double>(videos.size())));
      break;
    }
    case MetricKind::bimhm:
    case MetricKind::trx:
      out.videos.assign(videos.begin(), videos.end());
      break;
  }
  return out;
}

Prediction classify_query(std::span<const double> distances) {
  if (distances.empty()) throw DimensionError("classify_query: no classes");
  Prediction p;
  std::vector<double> logits(distances.size());
  for (std::size_t i = 0; i < distances.size(); ++i) logits[i] = -distances[i];
  const double lse = log_sum_exp(logits);
  p.probabilities.resize(distances.size());
  for (std::size_t i = 0; i < distances.size(); ++i) p.probabilities[i] = std::exp(logits[i] - lse);
  for (std::size_t i = 1; i < distances.size(); ++i)
    if (distances[i] < distances[p.slot]) p.slot = i;
  return p;
}

ParamSet TemporalMetric::initial_params(const MetricConfig& config, std::size_t channels,
                                        std::uint64_t seed) {
  validate(config);
  ParamSet p;
  if (config.kind == MetricKind::trx) add_trx_params(p, channels, config.trx_cardinalities, seed);
  return p;
}

TemporalMetric::TemporalMetric(const MetricConfig& config, std::size_t channels, std::uint64_t seed)
    : config_(config), params_(initial_params(config, channels, seed)) {}

TemporalMetric::TemporalMetric(const MetricConfig& config, ParamSet params)
    : config_(config), params_(std::move(params)) {
  validate(config_);
}

Tensor TemporalMetric::distance(const Tensor& query, const ClassSupport& support, Phase phase) const {
  if (support.kind != config_.kind) throw ConfigError("support was fused for a different metric");
  switch (config_.kind) {
    case MetricKind::otam:
      return otam_distance(frame_distance_matrix(query, support.videos.front()), config_.otam_lambda);
    case MetricKind::proto:
      return proto_distance(query, support.videos.front());
    case MetricKind::bimhm: {
      const double lambda =
          (phase == Phase::train || config_.bimhm_smooth_eval) ? config_.bimhm_lambda : 0.0;
      const Tensor frames = support.videos.size() == 1 ? support.videos.front() : concat(support.videos, 0);
      return bimhm_distance(query, frames, lambda);
    }
    case MetricKind::trx:
      return trx_distance(query, support.videos, params_, config_.trx_cardinalities);
  }
  throw ConfigError("unknown metric kind");
}

}  // namespace capfsar
