#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "capfsar/tensor.hpp"

namespace capfsar {

// Elementwise. Operands must have identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor square(const Tensor& x);
Tensor gelu(const Tensor& x);

/// x[..., n] + b[n], broadcast over all leading axes.
Tensor add_bias(const Tensor& x, const Tensor& bias);

/// a[m x k] . b[k x n]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

/// Numerically stable softmax along `axis` (max subtraction).
Tensor softmax(const Tensor& x, std::size_t axis);
/// Normalizes over the last axis, then applies gamma/beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Arithmetic mean over one axis; that axis is removed from the shape.
Tensor mean_axis(const Tensor& x, std::size_t axis);

/// Concatenates along `axis`; all other extents must agree.
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
/// Rows x[idx[0]], x[idx[1]], ... of a rank-2 tensor. Indices may repeat.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
/// Divides each row of a rank-2 tensor by its L2 norm. Zero rows are rejected.
Tensor row_normalize(const Tensor& x);

/// -lambda * log(sum(exp(-x / lambda))) along `axis`; exact min when lambda == 0
/// (gradient goes to the first minimizer).
Tensor soft_min(const Tensor& x, std::size_t axis, double lambda);

/// Boundary-relaxed (soft) dynamic time warping over a cost matrix D[Tq x Ts].
///
/// Every query row is matched in order to one support column; from row i-1 to
/// row i the column either stays or advances by one. The path may start in any
/// column and end in any column:
///   g(0, j) = D(0, j)
///   g(i, j) = D(i, j) + smin(g(i-1, j-1), g(i-1, j))
///   result  = smin_j g(Tq-1, j)
/// smin is soft_min with the given lambda (exact min at lambda == 0).
Tensor soft_dtw_relaxed(const Tensor& cost, double lambda);

/// Mean over rows of -log softmax(logits)[target]. logits is [rows x classes].
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> targets);

/// softmax(Q K^T / sqrt(d)) V for Q[q x d], K[k x d], V[k x dv].
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v);
/// The attention weight matrix softmax(Q K^T / sqrt(d)), [q x k].
Tensor attention_weights(const Tensor& q, const Tensor& k);

/// Stable log(sum(exp(x))) over a plain array.
double log_sum_exp(std::span<const double> x);
/// -lambda * log(sum(exp(-x / lambda))), or min(x) when lambda == 0.
double smooth_min(std::span<const double> x, double lambda);

}  // namespace capfsar
