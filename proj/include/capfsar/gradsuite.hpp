#pragma once

#include <cstdint>
#include <string>

#include "capfsar/gradcheck.hpp"
#include "capfsar/metrics.hpp"
#include "capfsar/vtagg.hpp"

namespace capfsar {

/// One randomized end-to-end gradient check: a small model, a metric and a
/// random episode, checked through the episode loss.
struct GradCase {
  ModelConfig model;
  MetricConfig metric;
  std::size_t way = 2;
  std::size_t shot = 1;
  std::uint64_t input_seed = 0;
};

/// Draw `index` of the suite. Fusion modes cycle fastest, then metrics
/// (otam, bimhm, trx, proto), so any 16 consecutive draws cover every pair.
GradCase grad_case(std::uint64_t suite_seed, std::uint64_t index);

std::string describe(const GradCase& c);

/// Compares the gradient of the training loss with central differences over
/// every model and metric parameter.
GradCheckReport grad_check_case(const GradCase& c, double h = 1e-5);

}  // namespace capfsar
