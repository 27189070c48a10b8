#include "capfsar/optim.hpp"

#include <cmath>

#include "capfsar/error.hpp"

namespace capfsar {

void adam_step(std::span<Tensor> params, std::span<const std::vector<double>> grads,
               AdamState& state, const AdamOptions& options) {
  if (!(options.lr >= 0.0)) throw ConfigError("adam: lr must be >= 0");
  if (!(options.beta1 >= 0.0 && options.beta1 < 1.0) ||
      !(options.beta2 >= 0.0 && options.beta2 < 1.0)) {
    throw ConfigError("adam: betas must lie in [0, 1)");
  }
  if (grads.size() != params.size()) {
    throw DimensionError("adam: " + std::to_string(grads.size()) + " gradients for " +
                         std::to_string(params.size()) + " parameters");
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (!grads[p].empty() && grads[p].size() != params[p].numel()) {
      throw DimensionError("adam: gradient of size " + std::to_string(grads[p].size()) +
                           " for parameter " + shape_str(params[p].shape()));
    }
  }
  if (state.m.empty()) {
    for (const Tensor& t : params) {
      state.m.emplace_back(t.numel(), 0.0);
      state.v.emplace_back(t.numel(), 0.0);
    }
  } else if (state.m.size() != params.size()) {
    throw DimensionError("adam: optimizer state does not match parameter list");
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(options.beta1, t);
  const double c2 = 1.0 - std::pow(options.beta2, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto values = params[p].mutable_values();
    auto& m = state.m[p];
    auto& v = state.v[p];
    if (m.size() != values.size()) throw DimensionError("adam: state buffer size mismatch");
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grads[p].empty() ? 0.0 : grads[p][i];
      m[i] = options.beta1 * m[i] + (1.0 - options.beta1) * g;
      v[i] = options.beta2 * v[i] + (1.0 - options.beta2) * g * g;
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      values[i] -= options.lr * m_hat / (std::sqrt(v_hat) + options.eps);
    }
  }
}

void adam_step(std::span<Tensor> params, AdamState& state, const AdamOptions& options) {
  std::vector<std::vector<double>> grads;
  grads.reserve(params.size());
  for (const Tensor& t : params) grads.emplace_back(t.grad().begin(), t.grad().end());
  adam_step(params, grads, state, options);
}

}  // namespace capfsar
