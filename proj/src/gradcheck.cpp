#include "capfsar/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "capfsar/error.hpp"

namespace capfsar {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

namespace {
double eval_scalar(const std::function<Tensor()>& f) {
  NoGradGuard guard;
  const Tensor y = f();
  if (y.numel() != 1) {
    throw ContractError("grad_check: function output has shape " + shape_str(y.shape()) +
                        ", expected a scalar");
  }
  return y.item();
}
}  // namespace

GradCheckReport grad_check_leaves(const std::function<Tensor()>& f, std::span<Tensor> leaves,
                                  std::span<const std::string> labels, double h) {
  if (!(h > 0.0)) throw ContractError("grad_check: step h must be positive");
  for (Tensor& t : leaves) {
    if (!t.is_leaf() || !t.requires_grad())
      throw ContractError("grad_check: every checked tensor must be a leaf requiring grad");
    t.zero_grad();
  }
  const Tensor y = f();
  if (y.numel() != 1) {
    throw ContractError("grad_check: function output has shape " + shape_str(y.shape()) +
                        ", expected a scalar");
  }
  backward(y);

  GradCheckReport report;
  for (std::size_t t = 0; t < leaves.size(); ++t) {
    Tensor& leaf = leaves[t];
    const std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
    auto values = leaf.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + h;
      const double plus = eval_scalar(f);
      values[i] = original - h;
      const double minus = eval_scalar(f);
      values[i] = original;
      const double numeric = (plus - minus) / (2.0 * h);
      const double a = analytic.empty() ? 0.0 : analytic[i];
      const double err = relative_error(a, numeric);
      ++report.coordinates;
      if (err > report.max_rel_error || report.coordinates == 1) {
        report.max_rel_error = err;
        report.worst_tensor = t < labels.size() ? labels[t] : std::to_string(t);
        report.worst_index = i;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
  Tensor leaf = x.detach(true);
  Tensor leaves[] = {leaf};
  return grad_check_leaves([&] { return f(leaf); }, leaves, {}, h).max_rel_error;
}

}  // namespace capfsar
