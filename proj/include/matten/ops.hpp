#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "matten/tensor.hpp"

// Differentiable primitives. Binary elementwise ops accept a right operand
// whose shape equals a trailing suffix of the left operand's shape; that is
// the only broadcasting rule.
namespace matten {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor scale(const Tensor& a, double s);
Tensor neg(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }

/// [M,K] x [K,P] -> [M,P]
Tensor matmul(const Tensor& a, const Tensor& b);
/// [B,M,K] x [B,K,P] -> [B,M,P]
Tensor bmm(const Tensor& a, const Tensor& b);
/// x[..., K] * w[K, P] (+ bias[P]). A rank-1 x is treated as one row.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias = {});

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor softplus(const Tensor& x);

/// Softmax over the last axis, max-subtracted.
Tensor softmax(const Tensor& x);

/// Normalizes over the last axis; gain and bias are optional [D] tensors.
Tensor layer_norm(const Tensor& x, const Tensor& gain = {},
                  const Tensor& bias = {}, double eps = 1e-6);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, std::span<const std::size_t> axes);
inline Tensor permute(const Tensor& x, std::initializer_list<std::size_t> axes) {
  return permute(x, std::span<const std::size_t>(axes.begin(), axes.size()));
}
Tensor flip(const Tensor& x, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin,
             std::size_t end);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
/// Repeats x (whose shape is a trailing suffix of `shape`) to `shape`.
Tensor broadcast_to(const Tensor& x, Shape shape);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Sum over one axis, which is removed from the shape.
Tensor sum_axis(const Tensor& x, std::size_t axis);

/// Inserts a new axis of extent `count` at `axis`, repeating x along it.
Tensor expand_axis(const Tensor& x, std::size_t axis, std::size_t count);

/// Depthwise causal convolution with left zero padding.
/// x[S, J, C], w[C, K], bias[C] -> [S, J, C]; w[c, K-1] weights the current
/// token.
Tensor causal_conv1d(const Tensor& x, const Tensor& w, const Tensor& bias);

/// Row `index` of table[V, D] as a [D] tensor.
Tensor take_row(const Tensor& table, std::size_t index);

/// Mean squared difference over all elements.
Tensor mse(const Tensor& a, const Tensor& b);

}  // namespace matten
