#pragma once

#include <concepts>
#include <cstddef>
#include <span>
#include <vector>

#include "matten/tensor.hpp"

// Selective state-space engine.
//
// Continuous system per channel d and state n (A diagonal):
//   h'(t) = A h(t) + B x(t),   y(t) = C h(t) + D x(t)
// Zero-order hold with step delta gives
//   A_bar = exp(delta A)
//   B_bar = (delta A)^-1 (exp(delta A) - 1) delta B = expm1(delta A) / A * B
// and the recurrence h_k = A_bar_k h_{k-1} + B_bar_k x_k, y_k = C_k h_k + D x_k.
namespace matten::ssm {

/// Below this |delta * A| the input gain uses delta * (1 + delta*A/2).
inline constexpr double kSeriesThreshold = 1e-4;

template <std::floating_point T>
struct DiscreteSsm {
  std::size_t length = 0;    // J
  std::size_t channels = 0;  // D_inner
  std::size_t state = 0;     // N
  std::vector<T> a_bar;      // [J, channels, state]
  std::vector<T> b_bar;      // [J, channels, state]
};

template <std::floating_point T>
T zoh_transition(T delta, T a);

/// B_bar / B for one diagonal entry.
template <std::floating_point T>
T zoh_input_gain(T delta, T a);

/// a[channels, state] (continuous, negative), b[J, state] per token,
/// delta[J, channels] > 0. `gains`, when given, receives the input gain
/// expm1(delta a) / a per cell, the factor b_bar carries before b.
template <std::floating_point T>
DiscreteSsm<T> discretize_zoh(std::span<const T> a, std::span<const T> b,
                              std::span<const T> delta, std::size_t length,
                              std::size_t channels, std::size_t state,
                              std::vector<T>* gains = nullptr);

struct ScanOptions {
  /// Worker cap for the channel loop; 0 means worker_count().
  std::size_t threads = 0;
};

/// Left-to-right recurrence. c[J, state], d_skip[channels], x[J, channels]
/// -> y[J, channels]. When `states` is given it receives h as [J, channels,
/// state].
template <std::floating_point T>
std::vector<T> scan_sequential(const DiscreteSsm<T>& disc, std::span<const T> c,
                               std::span<const T> d_skip, std::span<const T> x,
                               std::vector<T>* states = nullptr);

/// Same result through a Blelloch up-sweep/down-sweep over the affine maps
/// h -> a h + b, composed as (a2, b2) o (a1, b1) = (a2 a1, a2 b1 + b2).
template <std::floating_point T>
std::vector<T> scan_parallel(const DiscreteSsm<T>& disc, std::span<const T> c,
                             std::span<const T> d_skip, std::span<const T> x,
                             const ScanOptions& options = {},
                             std::vector<T>* states = nullptr);

/// Cost-model count for one scan of `length` tokens: 3 J C N + J C N^2,
/// C = channels. The transition is tallied as a dense N x N apply, which is
/// the convention the analytic SSM formula uses.
std::uint64_t scan_flop_count(std::size_t length, std::size_t channels,
                              std::size_t state);

/// One scan direction's selective parameters; D_inner = E * D.
struct SsmParams {
  Tensor a_log;           // [D_inner, N], A = -exp(a_log)
  Tensor d_skip;          // [D_inner]
  Tensor proj_bc;         // [D_inner, 2N] -> per-token B, C
  Tensor proj_delta_in;   // [D_inner, R]
  Tensor proj_delta_out;  // [R, D_inner]
  Tensor delta_bias;      // [D_inner], softplus(. + bias) > 0

  std::size_t inner() const { return a_log.extent(0); }
  std::size_t state() const { return a_log.extent(1); }
};

/// Differentiable fused scan. x, delta: [S, J, D_inner]; a: [D_inner, N]
/// continuous (negative); b, c: [S, J, N]; d_skip: [D_inner]. Each of the S
/// rows is an independent sequence. Forward runs discretize_zoh +
/// scan_parallel; backward is the exact adjoint recurrence.
Tensor scan(const Tensor& x, const Tensor& delta, const Tensor& a,
            const Tensor& b, const Tensor& c, const Tensor& d_skip);

/// Computes delta, B, C from x and scans. x: [S, J, D_inner].
Tensor selective_scan(const SsmParams& params, const Tensor& x);

/// A scan direction as used inside the bidirectional block: depthwise causal
/// conv + SiLU feeding the selective scan.
struct ScanDirection {
  Tensor conv_w;  // [D_inner, K]
  Tensor conv_b;  // [D_inner]
  SsmParams ssm;
};

Tensor direction_forward(const ScanDirection& dir, const Tensor& x);

/// forward(x) + reverse(backward(reverse(x))) along the token axis.
Tensor bidirectional_scan(const ScanDirection& fwd, const ScanDirection& bwd,
                          const Tensor& x);

}  // namespace matten::ssm
