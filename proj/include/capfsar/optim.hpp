#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "capfsar/tensor.hpp"

namespace capfsar {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment estimates, one buffer per parameter tensor.
struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::int64_t step = 0;
};

/// One Adam update with bias correction. `grads[i]` must match the size of
/// `params[i]`; an empty gradient is treated as all zeros. State buffers are
/// created on the first call.
void adam_step(std::span<Tensor> params, std::span<const std::vector<double>> grads,
               AdamState& state, const AdamOptions& options);

/// Same, reading each parameter's accumulated gradient.
void adam_step(std::span<Tensor> params, AdamState& state, const AdamOptions& options);

}  // namespace capfsar
