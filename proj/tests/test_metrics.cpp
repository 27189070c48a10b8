#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "capfsar/error.hpp"
#include "capfsar/metrics.hpp"
#include "capfsar/ops.hpp"
#include "support.hpp"

using namespace capfsar;
using testsupport::normal_tensor;
using testsupport::random_tensor;

namespace {

constexpr MetricKind kKinds[] = {MetricKind::otam, MetricKind::trx, MetricKind::bimhm, MetricKind::proto};

MetricConfig config_for(MetricKind kind) {
  MetricConfig c;
  c.kind = kind;
  return c;
}

Tensor row_permuted(const Tensor& x, std::span<const std::size_t> order) { return gather_rows(x, order); }

}  // namespace

TEST_CASE("metric names round trip") {
  for (MetricKind k : kKinds) CHECK(parse_metric_kind(to_string(k)) == k);
  CHECK_FALSE(parse_metric_kind("euclid").has_value());
}

TEST_CASE("frame distance examples") {
  const Tensor q({2, 2}, {1, 0, 0, 1});
  const Tensor s({3, 2}, {2, 0, -1, 0, 0, 3});
  const Tensor d = frame_distance_matrix(q, s);
  CHECK(d.shape() == Shape{2, 3});
  const std::vector<double> want{0, 2, 1, 1, 1, 0};
  for (std::size_t i = 0; i < 6; ++i) CHECK(d.values()[i] == doctest::Approx(want[i]).epsilon(1e-14));
  CHECK_THROWS_AS(frame_distance_matrix(Tensor({1, 2}, {0, 0}), s), DegenerateInputError);
  CHECK_THROWS_AS(frame_distance_matrix(q, Tensor({1, 3}, {1, 1, 1})), DimensionError);
}

TEST_CASE("frame distance stays in [0, 2] and is scale invariant") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    CounterRng rng(seed, 2);
    const Tensor q = normal_tensor(rng, {3, 6}), s = normal_tensor(rng, {4, 6});
    const Tensor d = frame_distance_matrix(q, s), d2 = frame_distance_matrix(scale(q, 3.5), s);
    for (std::size_t i = 0; i < d.numel(); ++i) {
      CHECK(d.values()[i] >= -1e-12);
      CHECK(d.values()[i] <= 2 + 1e-12);
      CHECK(d.values()[i] == doctest::Approx(d2.values()[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("brute-force alignment examples") {
  CHECK(dtw_bruteforce(Tensor({2, 2}, {1, 9, 9, 1})) == 2.0);
  CHECK(dtw_bruteforce(Tensor({1, 1}, {0.7})) == 0.7);
  CHECK(dtw_bruteforce(Tensor::zeros({4, 3})) == 0.0);
  // Free start and end: the cheap diagonal band can begin at column 2.
  CHECK(dtw_bruteforce(Tensor({2, 4}, {5, 5, 1, 5, 5, 5, 5, 1})) == 2.0);
  // One row: the smallest entry.
  CHECK(dtw_bruteforce(Tensor({1, 3}, {4, 2, 3})) == 2.0);
  CHECK_THROWS_AS(dtw_bruteforce(Tensor::zeros({9, 2})), OracleScopeError);
  CHECK_THROWS_AS(dtw_bruteforce(Tensor::zeros({2, 9})), OracleScopeError);
}

TEST_CASE("otam at lambda zero equals the brute-force alignment") {
  double worst = 0;
  for (std::uint64_t m = 0; m < 1000; ++m) {
    CounterRng rng(m, 3);
    const std::size_t tq = testsupport::between(rng, 1, 5), ts = testsupport::between(rng, 1, 5);
    const Tensor cost = random_tensor(rng, {tq, ts}, 0, 2);
    worst = std::max(worst, std::abs(otam_distance(cost, 0.0).item() - dtw_bruteforce(cost)));
  }
  CHECK(worst <= 1e-9);
}

TEST_CASE("otam is non-increasing in lambda and below the hard alignment") {
  for (std::uint64_t m = 0; m < 100; ++m) {
    CounterRng rng(m, 4);
    const Tensor cost = random_tensor(rng, {4, 4}, 0, 2);
    double prev = otam_distance(cost, 0.0).item();
    for (double lambda : {0.01, 0.1, 0.5, 1.0, 2.0}) {
      const double v = otam_distance(cost, lambda).item();
      CHECK(v <= prev + 1e-12);
      prev = v;
    }
  }
  CHECK(otam_distance(Tensor::zeros({3, 3}), 0.1).item() <= 0.0);
  CHECK(otam_distance(Tensor::zeros({3, 3}), 0.0).item() == 0.0);
}

TEST_CASE("bimhm examples") {
  CHECK(bimhm_from_costs(Tensor({2, 2}, {0.2, 0.9, 0.8, 0.1})).item() == doctest::Approx(0.3).epsilon(1e-14));
  // Rows and columns are averaged separately: 1x3 costs.
  CHECK(bimhm_from_costs(Tensor({1, 3}, {0.5, 0.2, 0.8})).item() == doctest::Approx(0.2 + 0.5).epsilon(1e-14));
  CHECK(bimhm_from_costs(Tensor({2, 2}, {0.2, 0.9, 0.8, 0.1}), 0.05).item() < 0.3);
}

TEST_CASE("bimhm is symmetric and zero against a frame permutation of itself") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    CounterRng rng(seed, 5);
    const Tensor q = normal_tensor(rng, {4, 6}), s = normal_tensor(rng, {5, 6});
    CHECK(bimhm_distance(q, s).item() == doctest::Approx(bimhm_distance(s, q).item()).epsilon(1e-12));
    const std::size_t order[] = {2, 0, 3, 1};
    CHECK(std::abs(bimhm_distance(q, row_permuted(q, order)).item()) <= 1e-12);
    CHECK(bimhm_distance(q, s).item() > 0.0);
  }
}

TEST_CASE("proto distance compares temporal means") {
  const Tensor q({2, 2}, {1, 0, 1, 2});  // mean (1, 1)
  const Tensor s({1, 2}, {-3, -3});
  CHECK(proto_distance(q, s).item() == doctest::Approx(2.0).epsilon(1e-14));
  const Tensor t({3, 2}, {0, 1, 5, 4, 1, 1});  // mean (2, 2)
  CHECK(std::abs(proto_distance(q, t).item()) <= 1e-14);
}

TEST_CASE("frame tuples") {
  CHECK(frame_tuples(8, 2).size() == 28);
  CHECK(frame_tuples(8, 3).size() == 56);
  CHECK(frame_tuples(3, 3) == std::vector<std::vector<std::size_t>>{{0, 1, 2}});
  CHECK(frame_tuples(4, 2) ==
        std::vector<std::vector<std::size_t>>{{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}});
  CHECK(frame_tuples(2, 3).empty());
}

TEST_CASE("trx with a single key reconstructs that key") {
  // T = 3, cardinality 3, one support: one tuple each, attention weight 1,
  // distance = |(Pq - Ps) Wv|^2 with P the tuple projection.
  MetricConfig mc = config_for(MetricKind::trx);
  mc.trx_cardinalities = {3};
  const ParamSet p = TemporalMetric::initial_params(mc, 4, 21);
  CounterRng rng(6, 6);
  const Tensor q = normal_tensor(rng, {3, 4}), s = normal_tensor(rng, {3, 4});
  const Tensor supports[] = {s};
  const double got = trx_distance(q, supports, p, mc.trx_cardinalities).item();
  const Tensor& w = p.get("trx.3.proj.w");
  const Tensor& wv = p.get("trx.3.wv");
  std::vector<double> gap(4, 0.0);
  for (std::size_t o = 0; o < 4; ++o)
    for (std::size_t i = 0; i < 12; ++i) gap[o] += (q.values()[i] - s.values()[i]) * w.values()[i * 4 + o];
  double want = 0;
  for (std::size_t o = 0; o < 4; ++o) {
    double v = 0;
    for (std::size_t i = 0; i < 4; ++i) v += gap[i] * wv.values()[i * 4 + o];
    want += v * v;
  }
  CHECK(got == doctest::Approx(want).epsilon(1e-12));
  const Tensor self[] = {q};
  CHECK(std::abs(trx_distance(q, self, p, mc.trx_cardinalities).item()) <= 1e-24);
}

TEST_CASE("trx prefers the query itself over random supports") {
  const MetricConfig mc = config_for(MetricKind::trx);
  int better = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const ParamSet p = TemporalMetric::initial_params(mc, 6, seed);
    CounterRng rng(seed, 7);
    const Tensor q = normal_tensor(rng, {5, 6}), other = normal_tensor(rng, {5, 6});
    const Tensor self[] = {q}, rand[] = {other};
    const double d_self = trx_distance(q, self, p, mc.trx_cardinalities).item();
    const double d_rand = trx_distance(q, rand, p, mc.trx_cardinalities).item();
    CHECK(d_self >= 0.0);
    better += d_self <= d_rand ? 1 : 0;
  }
  CHECK(better == 100);
}

TEST_CASE("trx rejects too few frames and mismatched supports") {
  const MetricConfig mc = config_for(MetricKind::trx);
  const ParamSet p = TemporalMetric::initial_params(mc, 4, 1);
  CounterRng rng(8, 8);
  const Tensor q = normal_tensor(rng, {2, 4});
  const Tensor supports[] = {normal_tensor(rng, {2, 4})};
  CHECK_THROWS_AS(trx_distance(q, supports, p, mc.trx_cardinalities), DimensionError);
  const Tensor q3 = normal_tensor(rng, {3, 4});
  CHECK_THROWS_AS(trx_distance(q3, supports, p, mc.trx_cardinalities), DimensionError);
  CHECK_THROWS_AS(trx_distance(q3, std::span<const Tensor>{}, p, mc.trx_cardinalities), DimensionError);
}

TEST_CASE("metric config validation") {
  MetricConfig c;
  c.otam_lambda = -0.1;
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = config_for(MetricKind::trx);
  c.trx_cardinalities = {4};
  CHECK_THROWS_AS(validate(c), ConfigError);
  c.trx_cardinalities = {2, 2};
  CHECK_THROWS_AS(validate(c), ConfigError);
  c.trx_cardinalities = {};
  CHECK_THROWS_AS(validate(c), ConfigError);
}

TEST_CASE("support fusion") {
  CounterRng rng(9, 9);
  const Tensor a = normal_tensor(rng, {3, 4}), b = normal_tensor(rng, {3, 4});
  const Tensor one[] = {a};
  const ClassSupport single = fuse_support(one, MetricKind::otam);
  REQUIRE(single.videos.size() == 1);
  CHECK(single.videos.front().values().data() == a.values().data());
  const Tensor two[] = {a, b};
  const ClassSupport mean = fuse_support(two, MetricKind::proto);
  REQUIRE(mean.videos.size() == 1);
  for (std::size_t i = 0; i < 12; ++i)
    CHECK(mean.videos.front().values()[i] == doctest::Approx((a.values()[i] + b.values()[i]) / 2).epsilon(1e-15));
  CHECK(fuse_support(two, MetricKind::bimhm).videos.size() == 2);
  CHECK(fuse_support(two, MetricKind::trx).videos.size() == 2);
  const Tensor mixed[] = {a, normal_tensor(rng, {2, 4})};
  CHECK_THROWS_AS(fuse_support(mixed, MetricKind::otam), DimensionError);
  CHECK_THROWS_AS(fuse_support(std::span<const Tensor>{}, MetricKind::otam), DimensionError);
}

TEST_CASE("classify_query examples") {
  const double d[] = {0.5, 0.1, 0.1, 0.9};
  const Prediction p = classify_query(d);
  CHECK(p.slot == 1);
  double z = 0;
  for (double x : d) z += std::exp(-x);
  for (std::size_t i = 0; i < 4; ++i) CHECK(p.probabilities[i] == doctest::Approx(std::exp(-d[i]) / z).epsilon(1e-14));
  const double equal[] = {0.3, 0.3, 0.3};
  CHECK(classify_query(equal).slot == 0);
  CHECK_THROWS_AS(classify_query(std::span<const double>{}), DimensionError);
}

TEST_CASE("classify_query under affine distance maps") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    CounterRng rng(seed, 10);
    const std::size_t n = testsupport::between(rng, 2, 10);
    const auto d = testsupport::uniform_values(rng, n, 0, 2);
    const double a = rng.uniform(0.1, 10), b = rng.uniform(-5, 5);
    std::vector<double> mapped(n), shifted(n);
    for (std::size_t i = 0; i < n; ++i) {
      mapped[i] = a * d[i] + b;
      shifted[i] = d[i] + b;
    }
    CHECK(classify_query(mapped).slot == classify_query(d).slot);
    const auto p = classify_query(d).probabilities, ps = classify_query(shifted).probabilities;
    for (std::size_t i = 0; i < n; ++i) CHECK(ps[i] == doctest::Approx(p[i]).epsilon(1e-12));
  }
}

TEST_CASE("distances do not depend on the order of the support videos") {
  for (MetricKind kind : kKinds) {
    const TemporalMetric metric(config_for(kind), 5, 3);
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      CounterRng rng(seed, 11);
      const Tensor q = normal_tensor(rng, {4, 5});
      const Tensor videos[] = {normal_tensor(rng, {4, 5}), normal_tensor(rng, {4, 5}), normal_tensor(rng, {4, 5})};
      const Tensor reordered[] = {videos[2], videos[0], videos[1]};
      for (Phase phase : {Phase::train, Phase::eval}) {
        const double d1 = metric.distance(q, metric.fuse(videos), phase).item();
        const double d2 = metric.distance(q, metric.fuse(reordered), phase).item();
        INFO(to_string(kind));
        CHECK(std::abs(d1 - d2) <= 1e-12 * std::max(1.0, std::abs(d1)));
      }
    }
  }
}

TEST_CASE("bimhm uses the smooth min only while training unless asked") {
  CounterRng rng(12, 12);
  const Tensor q = normal_tensor(rng, {3, 4});
  const Tensor s[] = {normal_tensor(rng, {3, 4})};
  MetricConfig c = config_for(MetricKind::bimhm);
  const TemporalMetric hard(c, 4, 0);
  const double eval = hard.distance(q, hard.fuse(s), Phase::eval).item();
  CHECK(eval == doctest::Approx(bimhm_distance(q, s[0]).item()).epsilon(1e-14));
  CHECK(hard.distance(q, hard.fuse(s), Phase::train).item() < eval);
  c.bimhm_smooth_eval = true;
  const TemporalMetric smooth(c, 4, 0);
  CHECK(smooth.distance(q, smooth.fuse(s), Phase::eval).item() < eval);
  const TemporalMetric otam(config_for(MetricKind::otam), 4, 0);
  CHECK_THROWS_AS(otam.distance(q, hard.fuse(s), Phase::eval), ConfigError);
}
