#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>

#include "capfsar/tensor.hpp"

namespace capfsar {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_tensor;  // label of the leaf holding the worst coordinate
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

/// Relative error |a - n| / max(|a|, |n|, 1e-8).
double relative_error(double analytic, double numeric);

/// Compares the reverse-mode gradient of a scalar function with central
/// differences (f(x + h e) - f(x - h e)) / 2h, coordinate by coordinate.
/// Throws ContractError when f does not return a single element.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h = 1e-5);

/// Same comparison over a set of leaf tensors that `f` closes over (for
/// example model parameters). Leaves are perturbed in place and restored.
GradCheckReport grad_check_leaves(const std::function<Tensor()>& f, std::span<Tensor> leaves,
                                  std::span<const std::string> labels, double h = 1e-5);

}  // namespace capfsar
