#include "capfsar/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "capfsar/error.hpp"

namespace capfsar {

namespace {

using detail::Node;

// Gradient buffer of input i, or nullptr when that input does not need one.
std::vector<double>* grad_of(Node& out, std::size_t i) {
  Node& in = *out.inputs[i];
  return in.requires_grad ? &in.grad_buffer() : nullptr;
}

const std::vector<double>& value_of(const Node& out, std::size_t i) { return out.inputs[i]->value; }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(x.shape()));
  }
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                         shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

// Softmin weights exp(-(a - min)/lambda) / sum, or a one-hot on the first
// minimizer when lambda == 0. Returns the smooth minimum.
double softmin_weights(std::span<const double> a, double lambda, std::span<double> w) {
  const auto min_it = std::min_element(a.begin(), a.end());
  const double m = *min_it;
  if (lambda == 0.0) {
    std::fill(w.begin(), w.end(), 0.0);
    w[static_cast<std::size_t>(min_it - a.begin())] = 1.0;
    return m;
  }
  double total = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    w[k] = std::exp(-(a[k] - m) / lambda);
    total += w[k];
  }
  for (double& v : w) v /= total;
  return m - lambda * std::log(total);
}

void check_lambda(double lambda, const char* op) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw ContractError(std::string(op) + ": lambda must be finite and >= 0");
  }
}

}  // namespace

double log_sum_exp(std::span<const double> x) {
  if (x.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(x.begin(), x.end());
  double total = 0.0;
  for (double v : x) total += std::exp(v - m);
  return m + std::log(total);
}

double smooth_min(std::span<const double> x, double lambda) {
  check_lambda(lambda, "smooth_min");
  if (x.empty()) throw DimensionError("smooth_min: empty input");
  if (lambda == 0.0) return *std::min_element(x.begin(), x.end());
  std::vector<double> neg(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) neg[i] = -x[i] / lambda;
  return -lambda * log_sum_exp(neg);
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return Tensor::from_op(a.shape(), std::move(out), {a, b}, "add", [](Node& o) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (auto* g = grad_of(o, k)) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] += o.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return Tensor::from_op(a.shape(), std::move(out), {a, b}, "sub", [](Node& o) {
    if (auto* g = grad_of(o, 0)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] += o.grad[i];
    }
    if (auto* g = grad_of(o, 1)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] -= o.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return Tensor::from_op(a.shape(), std::move(out), {a, b}, "mul", [](Node& o) {
    const auto& av = value_of(o, 0);
    const auto& bv = value_of(o, 1);
    if (auto* g = grad_of(o, 0)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] += o.grad[i] * bv[i];
    }
    if (auto* g = grad_of(o, 1)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] += o.grad[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v *= factor;
  return Tensor::from_op(x.shape(), std::move(out), {x}, "scale", [factor](Node& o) {
    if (auto* g = grad_of(o, 0)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] += o.grad[i] * factor;
    }
  });
}

Tensor add_scalar(const Tensor& x, double value) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v += value;
  return Tensor::from_op(x.shape(), std::move(out), {x}, "add_scalar", [](Node& o) {
    if (auto* g = grad_of(o, 0)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] += o.grad[i];
    }
  });
}

Tensor square(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * x.values()[i];
  return Tensor::from_op(x.shape(), std::move(out), {x}, "square", [](Node& o) {
    const auto& xv = value_of(o, 0);
    if (auto* g = grad_of(o, 0)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] += 2.0 * xv[i] * o.grad[i];
    }
  });
}

Tensor gelu(const Tensor& x) {
  // Exact form: x * Phi(x).
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.values()[i];
    out[i] = 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2));
  }
  return Tensor::from_op(x.shape(), std::move(out), {x}, "gelu", [](Node& o) {
    const auto& xv = value_of(o, 0);
    if (auto* g = grad_of(o, 0)) {
      const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
      for (std::size_t i = 0; i < o.grad.size(); ++i) {
        const double v = xv[i];
        const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        (*g)[i] += o.grad[i] * (cdf + v * pdf);
      }
    }
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const std::size_t n = x.shape().back();
  if (bias.rank() != 1 || bias.dim(0) != n) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match " +
                         shape_str(x.shape()));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias.values()[i % n];
  return Tensor::from_op(x.shape(), std::move(out), {x, bias}, "add_bias", [n](Node& o) {
    if (auto* g = grad_of(o, 0)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] += o.grad[i];
    }
    if (auto* g = grad_of(o, 1)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i % n] += o.grad[i];
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
    }
  }
  return Tensor::from_op({m, n}, std::move(out), {a, b}, "matmul", [m, k, n](Node& o) {
    const auto& av = value_of(o, 0);
    const auto& bv = value_of(o, 1);
    const auto& go = o.grad;
    if (auto* ga = grad_of(o, 0)) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += go[i * n + j] * bv[p * n + j];
          (*ga)[i * k + p] += s;
        }
      }
    }
    if (auto* gb = grad_of(o, 1)) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          if (aip == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) (*gb)[p * n + j] += aip * go[i * n + j];
        }
      }
    }
  });
}

Tensor transpose(const Tensor& x) {
  require_rank(x, 2, "transpose");
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x.values()[i * c + j];
  return Tensor::from_op({c, r}, std::move(out), {x}, "transpose", [r, c](Node& o) {
    if (auto* g = grad_of(o, 0)) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) (*g)[i * c + j] += o.grad[j * r + i];
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return Tensor::from_op(std::move(shape), std::move(out), {x}, "reshape", [](Node& o) {
    if (auto* g = grad_of(o, 0)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] += o.grad[i];
    }
  });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "softmax");
  const auto xv = x.values();
  std::vector<double> out(x.numel());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < s.extent; ++k) m = std::max(m, xv[base + k * s.inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < s.extent; ++k) {
        const double e = std::exp(xv[base + k * s.inner] - m);
        out[base + k * s.inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < s.extent; ++k) out[base + k * s.inner] /= total;
    }
  }
  return Tensor::from_op(x.shape(), std::move(out), {x}, "softmax", [s](Node& o) {
    auto* g = grad_of(o, 0);
    if (!g) return;
    const auto& y = o.value;
    for (std::size_t a = 0; a < s.outer; ++a) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = a * s.extent * s.inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < s.extent; ++k) {
          const std::size_t idx = base + k * s.inner;
          dot += o.grad[idx] * y[idx];
        }
        for (std::size_t k = 0; k < s.extent; ++k) {
          const std::size_t idx = base + k * s.inner;
          (*g)[idx] += y[idx] * (o.grad[idx] - dot);
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (!(eps >= 0.0)) throw ContractError("layer_norm: eps must be >= 0");
  const std::size_t c = x.shape().back();
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw DimensionError("layer_norm: gamma/beta " + shape_str(gamma.shape()) + "/" +
                         shape_str(beta.shape()) + " do not match " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / c;
  const auto xv = x.values();
  const auto gv = gamma.values();
  const auto bv = beta.values();
  std::vector<double> normed(x.numel());
  std::vector<double> inv_std(rows);
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t j = 0; j < c; ++j) {
      const double xh = (row[j] - mu) * inv;
      normed[r * c + j] = xh;
      out[r * c + j] = gv[j] * xh + bv[j];
    }
  }
  return Tensor::from_op(
      x.shape(), std::move(out), {x, gamma, beta}, "layer_norm",
      [c, rows, normed = std::move(normed), inv_std = std::move(inv_std)](Node& o) {
        const auto& gv = value_of(o, 1);
        if (auto* gg = grad_of(o, 1)) {
          for (std::size_t i = 0; i < o.grad.size(); ++i) (*gg)[i % c] += o.grad[i] * normed[i];
        }
        if (auto* gb = grad_of(o, 2)) {
          for (std::size_t i = 0; i < o.grad.size(); ++i) (*gb)[i % c] += o.grad[i];
        }
        if (auto* gx = grad_of(o, 0)) {
          const double inv_c = 1.0 / static_cast<double>(c);
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_d = 0.0;
            double mean_dx = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              const double d = o.grad[r * c + j] * gv[j];
              mean_d += d;
              mean_dx += d * normed[r * c + j];
            }
            mean_d *= inv_c;
            mean_dx *= inv_c;
            for (std::size_t j = 0; j < c; ++j) {
              const double d = o.grad[r * c + j] * gv[j];
              (*gx)[r * c + j] += inv_std[r] * (d - mean_d - normed[r * c + j] * mean_dx);
            }
          }
        }
      });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  return Tensor::from_op({1}, {total}, {x}, "sum", [](Node& o) {
    if (auto* g = grad_of(o, 0)) {
      for (double& v : *g) v += o.grad[0];
    }
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor mean_axis(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "mean_axis");
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (out_shape.empty()) out_shape = {1};
  const auto xv = x.values();
  std::vector<double> out(s.outer * s.inner, 0.0);
  const double inv = 1.0 / static_cast<double>(s.extent);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t k = 0; k < s.extent; ++k)
      for (std::size_t in = 0; in < s.inner; ++in)
        out[o * s.inner + in] += xv[(o * s.extent + k) * s.inner + in] * inv;
  return Tensor::from_op(std::move(out_shape), std::move(out), {x}, "mean_axis", [s, inv](Node& o) {
    if (auto* g = grad_of(o, 0)) {
      for (std::size_t a = 0; a < s.outer; ++a)
        for (std::size_t k = 0; k < s.extent; ++k)
          for (std::size_t in = 0; in < s.inner; ++in)
            (*g)[(a * s.extent + k) * s.inner + in] += o.grad[a * s.inner + in] * inv;
    }
  });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& ref = parts[0].shape();
  std::vector<std::size_t> extents;
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    const Shape& sh = p.shape();
    bool ok = sh.size() == ref.size() && axis < sh.size();
    for (std::size_t i = 0; ok && i < sh.size(); ++i) ok = (i == axis) || sh[i] == ref[i];
    if (!ok) {
      throw DimensionError("concat: " + shape_str(sh) + " incompatible with " + shape_str(ref) +
                           " along axis " + std::to_string(axis));
    }
    extents.push_back(sh[axis]);
    total += sh[axis];
  }
  AxisSplit s = split_axis(ref, axis, "concat");
  Shape out_shape = ref;
  out_shape[axis] = total;
  std::vector<double> out(s.outer * total * s.inner);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto pv = parts[p].values();
    const std::size_t e = extents[p];
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(pv.data() + o * e * s.inner, e * s.inner,
                  out.data() + (o * total + offset) * s.inner);
    offset += e;
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return Tensor::from_op(std::move(out_shape), std::move(out), std::move(inputs), "concat",
                         [s, total, extents](Node& o) {
                           std::size_t offset = 0;
                           for (std::size_t p = 0; p < extents.size(); ++p) {
                             const std::size_t e = extents[p];
                             if (auto* g = grad_of(o, p)) {
                               for (std::size_t a = 0; a < s.outer; ++a)
                                 for (std::size_t i = 0; i < e * s.inner; ++i)
                                   (*g)[a * e * s.inner + i] +=
                                       o.grad[(a * total + offset) * s.inner + i];
                             }
                             offset += e;
                           }
                         });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const AxisSplit s = split_axis(x.shape(), axis, "slice");
  if (begin >= end || end > s.extent) {
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for " + shape_str(x.shape()));
  }
  const std::size_t e = end - begin;
  Shape out_shape = x.shape();
  out_shape[axis] = e;
  const auto xv = x.values();
  std::vector<double> out(s.outer * e * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(xv.data() + (o * s.extent + begin) * s.inner, e * s.inner,
                out.data() + o * e * s.inner);
  return Tensor::from_op(std::move(out_shape), std::move(out), {x}, "slice", [s, begin, e](Node& o) {
    if (auto* g = grad_of(o, 0)) {
      for (std::size_t a = 0; a < s.outer; ++a)
        for (std::size_t i = 0; i < e * s.inner; ++i)
          (*g)[(a * s.extent + begin) * s.inner + i] += o.grad[a * e * s.inner + i];
    }
  });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_rank(x, 2, "gather_rows");
  if (rows.empty()) throw DimensionError("gather_rows: empty index list");
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<double> out(rows.size() * c);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= r) {
      throw DimensionError("gather_rows: row " + std::to_string(rows[i]) + " out of range for " +
                           shape_str(x.shape()));
    }
    std::copy_n(x.values().data() + rows[i] * c, c, out.data() + i * c);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return Tensor::from_op({rows.size(), c}, std::move(out), {x}, "gather_rows",
                         [c, idx = std::move(idx)](Node& o) {
                           if (auto* g = grad_of(o, 0)) {
                             for (std::size_t i = 0; i < idx.size(); ++i)
                               for (std::size_t j = 0; j < c; ++j)
                                 (*g)[idx[i] * c + j] += o.grad[i * c + j];
                           }
                         });
}

Tensor row_normalize(const Tensor& x) {
  require_rank(x, 2, "row_normalize");
  const std::size_t r = x.dim(0), c = x.dim(1);
  const auto xv = x.values();
  std::vector<double> norms(r);
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < c; ++j) ss += xv[i * c + j] * xv[i * c + j];
    if (ss == 0.0) {
      throw DegenerateInputError("row_normalize: row " + std::to_string(i) + " has zero norm");
    }
    norms[i] = std::sqrt(ss);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xv[i * c + j] / norms[i];
  }
  return Tensor::from_op({r, c}, std::move(out), {x}, "row_normalize",
                         [r, c, norms = std::move(norms)](Node& o) {
                           auto* g = grad_of(o, 0);
                           if (!g) return;
                           for (std::size_t i = 0; i < r; ++i) {
                             double dot = 0.0;
                             for (std::size_t j = 0; j < c; ++j)
                               dot += o.value[i * c + j] * o.grad[i * c + j];
                             for (std::size_t j = 0; j < c; ++j)
                               (*g)[i * c + j] +=
                                   (o.grad[i * c + j] - o.value[i * c + j] * dot) / norms[i];
                           }
                         });
}

Tensor soft_min(const Tensor& x, std::size_t axis, double lambda) {
  check_lambda(lambda, "soft_min");
  const AxisSplit s = split_axis(x.shape(), axis, "soft_min");
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (out_shape.empty()) out_shape = {1};
  const auto xv = x.values();
  std::vector<double> out(s.outer * s.inner);
  std::vector<double> weights(x.numel());
  std::vector<double> slice_vals(s.extent), slice_w(s.extent);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      for (std::size_t k = 0; k < s.extent; ++k)
        slice_vals[k] = xv[(o * s.extent + k) * s.inner + in];
      out[o * s.inner + in] = softmin_weights(slice_vals, lambda, slice_w);
      for (std::size_t k = 0; k < s.extent; ++k)
        weights[(o * s.extent + k) * s.inner + in] = slice_w[k];
    }
  }
  return Tensor::from_op(std::move(out_shape), std::move(out), {x}, "soft_min",
                         [s, weights = std::move(weights)](Node& o) {
                           if (auto* g = grad_of(o, 0)) {
                             for (std::size_t a = 0; a < s.outer; ++a)
                               for (std::size_t k = 0; k < s.extent; ++k)
                                 for (std::size_t in = 0; in < s.inner; ++in) {
                                   const std::size_t idx = (a * s.extent + k) * s.inner + in;
                                   (*g)[idx] += o.grad[a * s.inner + in] * weights[idx];
                                 }
                           }
                         });
}

Tensor soft_dtw_relaxed(const Tensor& cost, double lambda) {
  check_lambda(lambda, "soft_dtw_relaxed");
  require_rank(cost, 2, "soft_dtw_relaxed");
  const std::size_t rows = cost.dim(0), cols = cost.dim(1);
  const auto d = cost.values();
  // Per cell: accumulated cost and the softmin weights of its two predecessors.
  std::vector<double> acc(rows * cols);
  std::vector<double> w_diag(rows * cols, 0.0), w_down(rows * cols, 0.0);
  for (std::size_t j = 0; j < cols; ++j) acc[j] = d[j];
  double pred[2];
  double w[2];
  for (std::size_t i = 1; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      const std::size_t cell = i * cols + j;
      if (j == 0) {
        acc[cell] = d[cell] + acc[(i - 1) * cols];
        w_down[cell] = 1.0;
        continue;
      }
      pred[0] = acc[(i - 1) * cols + j - 1];
      pred[1] = acc[(i - 1) * cols + j];
      acc[cell] = d[cell] + softmin_weights(pred, lambda, w);
      w_diag[cell] = w[0];
      w_down[cell] = w[1];
    }
  }
  std::vector<double> w_end(cols);
  const double result = softmin_weights(
      std::span<const double>(acc.data() + (rows - 1) * cols, cols), lambda, w_end);
  return Tensor::from_op(
      {1}, {result}, {cost}, "soft_dtw_relaxed",
      [rows, cols, w_diag = std::move(w_diag), w_down = std::move(w_down),
       w_end = std::move(w_end)](Node& o) {
        auto* g = grad_of(o, 0);
        if (!g) return;
        // Adjoint of each accumulated cell, filled bottom-up.
        std::vector<double> adj(rows * cols, 0.0);
        for (std::size_t j = 0; j < cols; ++j) adj[(rows - 1) * cols + j] = o.grad[0] * w_end[j];
        for (std::size_t i = rows - 1; i >= 1; --i) {
          for (std::size_t j = 0; j < cols; ++j) {
            const std::size_t cell = i * cols + j;
            const double a = adj[cell];
            if (a == 0.0) continue;
            if (j > 0) adj[(i - 1) * cols + j - 1] += a * w_diag[cell];
            adj[(i - 1) * cols + j] += a * w_down[cell];
          }
        }
        for (std::size_t i = 0; i < rows * cols; ++i) (*g)[i] += adj[i];
      });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const std::size_t rows = logits.dim(0), n = logits.dim(1);
  if (targets.size() != rows) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(targets.size()) +
                         " targets for " + shape_str(logits.shape()));
  }
  const auto lv = logits.values();
  std::vector<double> probs(rows * n);
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] >= n) throw DimensionError("softmax_cross_entropy: target out of range");
    const std::span<const double> row(lv.data() + r * n, n);
    const double lse = log_sum_exp(row);
    for (std::size_t j = 0; j < n; ++j) probs[r * n + j] = std::exp(row[j] - lse);
    loss += lse - row[targets[r]];
  }
  loss /= static_cast<double>(rows);
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  return Tensor::from_op({1}, {loss}, {logits}, "softmax_cross_entropy",
                         [rows, n, probs = std::move(probs), tgt = std::move(tgt)](Node& o) {
                           auto* g = grad_of(o, 0);
                           if (!g) return;
                           const double s = o.grad[0] / static_cast<double>(rows);
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t j = 0; j < n; ++j)
                               (*g)[r * n + j] +=
                                   s * (probs[r * n + j] - (j == tgt[r] ? 1.0 : 0.0));
                         });
}

Tensor attention_weights(const Tensor& q, const Tensor& k) {
  require_rank(q, 2, "attention");
  require_rank(k, 2, "attention");
  if (q.dim(1) != k.dim(1)) {
    throw DimensionError("attention: query " + shape_str(q.shape()) + " and key " +
                         shape_str(k.shape()) + " widths differ");
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  return softmax(scale(matmul(q, transpose(k)), inv_sqrt_d), 1);
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  require_rank(v, 2, "attention");
  if (v.dim(0) != k.dim(0)) {
    throw DimensionError("attention: key " + shape_str(k.shape()) + " and value " +
                         shape_str(v.shape()) + " counts differ");
  }
  return matmul(attention_weights(q, k), v);
}

}  // namespace capfsar
