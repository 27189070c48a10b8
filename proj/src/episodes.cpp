#include "capfsar/episodes.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <set>
#include <thread>

#include "capfsar/error.hpp"

namespace capfsar {

namespace {

// Partial Fisher-Yates: the first `count` entries become the draw, in order.
template <typename T>
void draw_prefix(std::vector<T>& items, std::size_t count, CounterRng& rng) {
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.uniform_int(items.size() - i));
    std::swap(items[i], items[j]);
  }
}

}  // namespace

void validate(const SplitSpec& split) {
  std::set<std::uint32_t> train(split.train_classes.begin(), split.train_classes.end());
  for (std::uint32_t c : split.test_classes) {
    if (train.count(c)) {
      throw ConfigError("class " + std::to_string(c) + " appears in both train and test splits");
    }
  }
}

Episode sample_episode(const FeatureStore& store, std::span<const std::uint32_t> classes,
                       std::size_t way, std::size_t shot, std::size_t queries_per_class,
                       CounterRng& rng) {
  if (way == 0 || shot == 0) throw SamplingError("way and shot must be positive");
  std::vector<std::uint32_t> pool(classes.begin(), classes.end());
  std::sort(pool.begin(), pool.end());
  pool.erase(std::unique(pool.begin(), pool.end()), pool.end());
  if (pool.size() < way) {
    throw SamplingError("need " + std::to_string(way) + " classes, only " +
                        std::to_string(pool.size()) + " available (short by " +
                        std::to_string(way - pool.size()) + ")");
  }
  const std::size_t per_class = shot + queries_per_class;
  for (std::uint32_t c : pool) {
    const auto it = store.by_class().find(c);
    const std::size_t have = it == store.by_class().end() ? 0 : it->second.size();
    if (have < per_class) {
      throw SamplingError("class " + std::to_string(c) + " has " + std::to_string(have) +
                          " videos, needs " + std::to_string(per_class) + " (short by " +
                          std::to_string(per_class - have) + ")");
    }
  }

  draw_prefix(pool, way, rng);
  Episode ep;
  ep.way = way;
  ep.shot = shot;
  ep.classes.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(way));
  ep.support.reserve(way * shot);
  ep.queries.reserve(way * queries_per_class);
  std::vector<std::vector<std::size_t>> drawn(way);
  for (std::size_t slot = 0; slot < way; ++slot) {
    std::vector<std::size_t> videos = store.by_class().at(ep.classes[slot]);
    draw_prefix(videos, per_class, rng);
    videos.resize(per_class);
    drawn[slot] = std::move(videos);
  }
  for (std::size_t slot = 0; slot < way; ++slot)
    for (std::size_t k = 0; k < shot; ++k) ep.support.push_back(drawn[slot][k]);
  for (std::size_t slot = 0; slot < way; ++slot)
    for (std::size_t k = shot; k < per_class; ++k) ep.queries.push_back({drawn[slot][k], slot});
  return ep;
}

namespace {

void check_permutation(std::span<const std::size_t> perm, std::size_t n, const char* what) {
  std::vector<bool> seen(n, false);
  if (perm.size() != n) throw ContractError(std::string(what) + ": permutation has the wrong length");
  for (std::size_t p : perm) {
    if (p >= n || seen[p]) throw ContractError(std::string(what) + ": not a permutation");
    seen[p] = true;
  }
}

}  // namespace

Episode relabel_slots(const Episode& episode, std::span<const std::size_t> perm) {
  check_permutation(perm, episode.way, "relabel_slots");
  Episode out = episode;
  for (std::size_t s = 0; s < episode.way; ++s) {
    out.classes[perm[s]] = episode.classes[s];
    for (std::size_t k = 0; k < episode.shot; ++k)
      out.support[perm[s] * episode.shot + k] = episode.support[s * episode.shot + k];
  }
  for (QueryItem& q : out.queries) q.slot = perm[q.slot];
  return out;
}

Episode permute_support(const Episode& episode, std::span<const std::size_t> perm) {
  check_permutation(perm, episode.shot, "permute_support");
  Episode out = episode;
  for (std::size_t s = 0; s < episode.way; ++s)
    for (std::size_t k = 0; k < episode.shot; ++k)
      out.support[s * episode.shot + k] = episode.support[s * episode.shot + perm[k]];
  return out;
}

CounterRng episode_rng(std::uint64_t seed, std::uint64_t index) {
  return CounterRng(seed, CounterRng::stream_id({0x45504953ULL, index}));
}

ProtocolResult run_protocol(const FeatureStore& store, std::span<const std::uint32_t> classes,
                            const ProtocolConfig& config, const EpisodeScorer& scorer) {
  if (config.episodes == 0) throw ConfigError("protocol needs at least one episode");
  const std::size_t way = config.way;
  const std::size_t n = config.episodes;

  std::vector<double> accuracy(n, 0.0);
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> outcomes(n);
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::size_t error_index = n;
  std::exception_ptr error;

  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        CounterRng rng = episode_rng(config.seed, i);
        const Episode ep =
            sample_episode(store, classes, way, config.shot, config.queries_per_class, rng);
        const std::vector<double> dist = scorer(ep);
        if (dist.size() != ep.queries.size() * way) {
          throw DimensionError("scorer returned " + std::to_string(dist.size()) +
                               " distances for " + std::to_string(ep.queries.size()) +
                               " queries x " + std::to_string(way) + " classes");
        }
        std::size_t correct = 0;
        auto& out = outcomes[i];
        for (std::size_t q = 0; q < ep.queries.size(); ++q) {
          // argmin with ties going to the lowest slot
          std::size_t best = 0;
          for (std::size_t s = 1; s < way; ++s)
            if (dist[q * way + s] < dist[q * way + best]) best = s;
          out.emplace_back(ep.queries[q].slot, best);
          if (best == ep.queries[q].slot) ++correct;
        }
        accuracy[i] = static_cast<double>(correct) / static_cast<double>(ep.queries.size());
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (i < error_index) {
          error_index = i;
          error = std::current_exception();
        }
        next.store(n);
      }
    }
  };

  const std::size_t threads = std::max<std::size_t>(1, std::min(config.threads, n));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (error) std::rethrow_exception(error);

  ProtocolResult result;
  result.way = way;
  result.confusion.assign(way * way, 0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total += accuracy[i];
    for (const auto& [truth, pred] : outcomes[i]) ++result.confusion[truth * way + pred];
  }
  result.mean_accuracy = total / static_cast<double>(n);
  double ss = 0.0;
  for (double a : accuracy) ss += (a - result.mean_accuracy) * (a - result.mean_accuracy);
  const double sigma = std::sqrt(ss / static_cast<double>(n));
  result.ci95 = 1.96 * sigma / std::sqrt(static_cast<double>(n));
  result.episode_accuracy = std::move(accuracy);
  return result;
}

}  // namespace capfsar
