#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "capfsar/error.hpp"
#include "capfsar/ops.hpp"
#include "capfsar/vtagg.hpp"
#include "support.hpp"

using namespace capfsar;
using testsupport::normal_tensor;

namespace {

ModelConfig small_config(FusionMode mode, std::uint32_t frames = 3, std::uint32_t tokens = 2) {
  ModelConfig c;
  c.channels = 8;
  c.heads = 2;
  c.frames = frames;
  c.tokens = tokens;
  c.fusion = mode;
  c.seed = 4;
  return c;
}

constexpr FusionMode kModes[] = {FusionMode::cross_attention, FusionMode::concat, FusionMode::sum,
                                 FusionMode::visual_only};

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

// Rows of x in the given frame order.
Tensor permute_rows(const Tensor& x, std::span<const std::size_t> order) { return gather_rows(x, order); }

}  // namespace

TEST_CASE("fusion mode names round trip") {
  for (FusionMode m : kModes) CHECK(parse_fusion_mode(to_string(m)) == m);
  CHECK_FALSE(parse_fusion_mode("late").has_value());
}

TEST_CASE("forward maps [T x S x C] and [T x C] to [T x C] in every mode") {
  CounterRng rng(1, 1);
  for (FusionMode m : kModes) {
    for (std::uint32_t t : {1u, 3u}) {
      const VtAggModel model(small_config(m, t));
      const Tensor out = model.forward(normal_tensor(rng, {t, 2, 8}), normal_tensor(rng, {t, 8}));
      CHECK(out.shape() == Shape{t, 8});
      for (double v : out.values()) CHECK(std::isfinite(v));
    }
  }
}

TEST_CASE("wrong input shapes are dimension errors") {
  const VtAggModel model(small_config(FusionMode::cross_attention));
  CounterRng rng(2, 1);
  CHECK_THROWS_AS(model.forward(normal_tensor(rng, {3, 3, 8}), normal_tensor(rng, {3, 8})), DimensionError);
  CHECK_THROWS_AS(model.forward(normal_tensor(rng, {3, 2, 8}), normal_tensor(rng, {4, 8})), DimensionError);
  CHECK_THROWS_AS(model.forward(normal_tensor(rng, {3, 8}), normal_tensor(rng, {3, 8})), DimensionError);
}

TEST_CASE("config validation") {
  ModelConfig c = small_config(FusionMode::sum);
  c.heads = 3;
  CHECK_THROWS_AS(VtAggModel{c}, ConfigError);
  c = small_config(FusionMode::sum);
  c.layers = 0;
  CHECK_THROWS_AS(VtAggModel{c}, ConfigError);
  c = small_config(FusionMode::sum);
  c.frames = 0;
  CHECK_THROWS_AS(VtAggModel{c}, ConfigError);
}

TEST_CASE("text temporal encoding depends on frame order") {
  const VtAggModel model(small_config(FusionMode::cross_attention, 4));
  CounterRng rng(3, 1);
  const Tensor text = normal_tensor(rng, {4, 8});
  const std::size_t order[] = {3, 1, 0, 2};
  const Tensor encoded_then_permuted = permute_rows(model.text_temporal_encode(text), order);
  const Tensor permuted_then_encoded = model.text_temporal_encode(permute_rows(text, order));
  CHECK(max_abs_diff(encoded_then_permuted, permuted_then_encoded) > 1e-3);
}

TEST_CASE("visual_only ignores text, other modes do not") {
  CounterRng rng(4, 1);
  const Tensor visual = normal_tensor(rng, {3, 2, 8});
  const Tensor text_a = normal_tensor(rng, {3, 8}), text_b = normal_tensor(rng, {3, 8});
  for (FusionMode m : kModes) {
    const VtAggModel model(small_config(m));
    const double diff = max_abs_diff(model.forward(visual, text_a), model.forward(visual, text_b));
    INFO(to_string(m));
    if (m == FusionMode::visual_only)
      CHECK(diff == 0.0);
    else
      CHECK(diff > 1e-3);
  }
}

TEST_CASE("a single caption token gets attention weight one") {
  // T = 1: every visual token attends to the one caption, so the fused
  // tokens equal LN(x + (text' Wv + bv) Wo + bo) for all tokens.
  ModelConfig c = small_config(FusionMode::cross_attention, 1, 3);
  const VtAggModel model(c);
  CounterRng rng(5, 1);
  const Tensor visual = normal_tensor(rng, {1, 3, 8});
  const Tensor text = model.text_temporal_encode(normal_tensor(rng, {1, 8}));
  const ParamSet& p = model.params();
  const Tensor value = add_bias(matmul(text, p.get("fuse.attn.wv")), p.get("fuse.attn.bv"));
  const Tensor mixed = add_bias(matmul(value, p.get("fuse.attn.wo")), p.get("fuse.attn.bo"));
  const Tensor fused = model.cross_modal_fuse(visual, text);
  for (std::size_t s = 0; s < 3; ++s) {
    std::vector<double> row(8);
    for (std::size_t k = 0; k < 8; ++k) row[k] = visual.values()[s * 8 + k] + mixed.values()[k];
    double mu = 0, var = 0;
    for (double v : row) mu += v / 8;
    for (double v : row) var += (v - mu) * (v - mu) / 8;
    for (std::size_t k = 0; k < 8; ++k)
      CHECK(fused.values()[s * 8 + k] == doctest::Approx((row[k] - mu) / std::sqrt(var + 1e-5)).epsilon(1e-10));
  }
}

TEST_CASE("zero value projection reduces fusion to layer norm of the visual tokens") {
  VtAggModel model(small_config(FusionMode::cross_attention));
  for (const char* name : {"fuse.attn.wv", "fuse.attn.bv"}) {
    Tensor w = model.params().get(name);
    std::fill(w.mutable_values().begin(), w.mutable_values().end(), 0.0);
  }
  CounterRng rng(6, 1);
  const Tensor visual = normal_tensor(rng, {3, 2, 8});
  const Tensor fused = model.cross_modal_fuse(visual, normal_tensor(rng, {3, 8}));
  for (std::size_t r = 0; r < 6; ++r) {
    double mu = 0, var = 0;
    for (std::size_t k = 0; k < 8; ++k) mu += visual.values()[r * 8 + k] / 8;
    for (std::size_t k = 0; k < 8; ++k) var += std::pow(visual.values()[r * 8 + k] - mu, 2) / 8;
    for (std::size_t k = 0; k < 8; ++k)
      CHECK(fused.values()[r * 8 + k] ==
            doctest::Approx((visual.values()[r * 8 + k] - mu) / std::sqrt(var + 1e-5)).epsilon(1e-10));
  }
}

TEST_CASE("cross_modal_fuse needs cross_attention mode") {
  const VtAggModel model(small_config(FusionMode::sum));
  CounterRng rng(7, 1);
  CHECK_THROWS_AS(model.cross_modal_fuse(normal_tensor(rng, {3, 2, 8}), normal_tensor(rng, {3, 8})), ConfigError);
}

TEST_CASE("spatial GAP examples") {
  const Tensor x({2, 2, 2}, {1, 2, 3, 4, 10, 20, 30, 40});
  const Tensor g = spatial_gap(x);
  CHECK(g.shape() == Shape{2, 2});
  CHECK(std::vector<double>(g.values().begin(), g.values().end()) == std::vector<double>{2, 3, 20, 30});
  CHECK_THROWS_AS(spatial_gap(Tensor({2, 2}, {1, 2, 3, 4})), DimensionError);
}

TEST_CASE("sinusoidal positions") {
  const Tensor p = sinusoidal_positions(3, 4);
  CHECK(p.shape() == Shape{3, 4});
  CHECK(p.values()[0] == 0.0);
  CHECK(p.values()[1] == 1.0);
  CHECK(p.values()[4] == doctest::Approx(std::sin(1.0)));
  CHECK(p.values()[5] == doctest::Approx(std::cos(1.0)));
  CHECK(p.values()[4 + 2] == doctest::Approx(std::sin(1.0 / 100.0)));
  CHECK(p.values()[8 + 3] == doctest::Approx(std::cos(2.0 / 100.0)));
}

TEST_CASE("initialisation depends only on the seed") {
  const ModelConfig c = small_config(FusionMode::concat);
  CHECK(VtAggModel(c).params().digest() == VtAggModel(c).params().digest());
  ModelConfig other = c;
  other.seed = 5;
  CHECK(VtAggModel(c).params().digest() != VtAggModel(other).params().digest());
  const ParamSet p = VtAggModel::initial_params(c);
  const Tensor& w = p.get("fuse.proj.w");
  CHECK(w.shape() == Shape{16, 8});
  const double bound = 1.0 / std::sqrt(16.0);
  for (double v : w.values()) CHECK(std::abs(v) <= bound);
  for (double v : p.get("fuse.proj.b").values()) CHECK(v == 0.0);
  for (double v : p.get("temporal.0.ln1.gamma").values()) CHECK(v == 1.0);
}

TEST_CASE("parameter layout per mode") {
  const ParamSet cross = VtAggModel::initial_params(small_config(FusionMode::cross_attention));
  CHECK(cross.contains("text.0.attn.wq"));
  CHECK(cross.contains("fuse.attn.wk"));
  CHECK_FALSE(cross.contains("fuse.attn.bk"));
  CHECK(cross.contains("fuse.ln.gamma"));
  CHECK(cross.get("temporal.0.ffn.w1").shape() == Shape{8, 16});
  const ParamSet vis = VtAggModel::initial_params(small_config(FusionMode::visual_only));
  CHECK_FALSE(vis.contains("text.0.attn.wq"));
  CHECK_FALSE(vis.contains("fuse.attn.wq"));
  ModelConfig two = small_config(FusionMode::sum);
  two.layers = 2;
  CHECK(VtAggModel::initial_params(two).contains("temporal.1.attn.wo"));
  CHECK(VtAggModel::initial_params(two).contains("text.1.attn.wo"));
}

TEST_CASE("text_temporal off allocates no text parameters and passes captions through") {
  ModelConfig c = small_config(FusionMode::sum);
  c.text_temporal = false;
  const VtAggModel model(c);
  for (const auto& n : model.params().names()) CHECK(n.rfind("text.", 0) != 0);
  CounterRng rng(8, 1);
  const Tensor text = normal_tensor(rng, {3, 8});
  CHECK(max_abs_diff(model.text_temporal_encode(text), text) == 0.0);
}

TEST_CASE("explicit parameter sets are checked against the config") {
  const ModelConfig c = small_config(FusionMode::sum);
  CHECK_NOTHROW(VtAggModel(c, VtAggModel::initial_params(c)));
  CHECK_THROWS_AS(VtAggModel(c, VtAggModel::initial_params(small_config(FusionMode::concat))), ConfigError);
  ModelConfig wide = c;
  wide.channels = 12;
  CHECK_THROWS_AS(VtAggModel(c, VtAggModel::initial_params(wide)), DimensionError);
}

TEST_CASE("multi-head attention with one head matches the plain formula") {
  ParamSet p;
  CounterRng rng(9, 1);
  for (const char* n : {"a.wq", "a.wk", "a.wv", "a.wo"}) p.add(n, normal_tensor(rng, {4, 4}));
  for (const char* n : {"a.bq", "a.bv", "a.bo"}) p.add(n, normal_tensor(rng, {4}));
  const Tensor q = normal_tensor(rng, {3, 4}), kv = normal_tensor(rng, {5, 4});
  const Tensor expect = add_bias(
      matmul(scaled_dot_attention(add_bias(matmul(q, p.get("a.wq")), p.get("a.bq")), matmul(kv, p.get("a.wk")),
                                  add_bias(matmul(kv, p.get("a.wv")), p.get("a.bv"))),
             p.get("a.wo")),
      p.get("a.bo"));
  CHECK(max_abs_diff(multi_head_attention(q, kv, p, "a", 1), expect) < 1e-12);
  CHECK(max_abs_diff(multi_head_attention(q, kv, p, "a", 2), expect) > 1e-6);
  CHECK_THROWS_AS(multi_head_attention(q, kv, p, "a", 3), ConfigError);
}
