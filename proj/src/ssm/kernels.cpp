#include <algorithm>
#include <bit>
#include <cmath>
#include <string>

#include "matten/error.hpp"
#include "matten/parallel.hpp"
#include "matten/ssm.hpp"

namespace matten::ssm {

namespace {

void require_size(std::size_t got, std::size_t want, const char* what) {
  if (got != want) {
    throw DimensionError(std::string(what) + ": expected " + std::to_string(want) +
                         " values, got " + std::to_string(got));
  }
}

template <typename T>
void check_scan_inputs(const DiscreteSsm<T>& disc, std::span<const T> c,
                       std::span<const T> d_skip, std::span<const T> x) {
  const std::size_t cells = disc.length * disc.channels * disc.state;
  require_size(disc.a_bar.size(), cells, "scan: a_bar");
  require_size(disc.b_bar.size(), cells, "scan: b_bar");
  require_size(c.size(), disc.length * disc.state, "scan: C");
  require_size(d_skip.size(), disc.channels, "scan: D");
  require_size(x.size(), disc.length * disc.channels, "scan: x");
}

// y_k = sum_n C_k[n] h_k[n] + D x_k, shared by both scan paths so that equal
// states give bit-equal outputs.
template <typename T>
void emit_outputs(const DiscreteSsm<T>& disc, std::span<const T> c,
                  std::span<const T> d_skip, std::span<const T> x,
                  const std::vector<T>& h, std::vector<T>& y) {
  const std::size_t J = disc.length, C = disc.channels, N = disc.state;
  for (std::size_t k = 0; k < J; ++k)
    for (std::size_t d = 0; d < C; ++d) {
      const T* hk = h.data() + (k * C + d) * N;
      const T* ck = c.data() + k * N;
      T acc = 0;
      for (std::size_t n = 0; n < N; ++n) acc += ck[n] * hk[n];
      y[k * C + d] = acc + d_skip[d] * x[k * C + d];
    }
}

}  // namespace

template <std::floating_point T>
T zoh_transition(T delta, T a) {
  return std::exp(delta * a);
}

template <std::floating_point T>
T zoh_input_gain(T delta, T a) {
  const T z = delta * a;
  if (std::abs(z) < static_cast<T>(kSeriesThreshold)) {
    return delta * (T(1) + z / T(2));
  }
  return std::expm1(z) / a;
}

template <std::floating_point T>
DiscreteSsm<T> discretize_zoh(std::span<const T> a, std::span<const T> b,
                              std::span<const T> delta, std::size_t length,
                              std::size_t channels, std::size_t state,
                              std::vector<T>* gains) {
  require_size(a.size(), channels * state, "discretize_zoh: A");
  require_size(b.size(), length * state, "discretize_zoh: B");
  require_size(delta.size(), length * channels, "discretize_zoh: delta");
  DiscreteSsm<T> out{length, channels, state, {}, {}};
  out.a_bar.resize(length * channels * state);
  out.b_bar.resize(length * channels * state);
  if (gains) gains->resize(length * channels * state);
  for (std::size_t k = 0; k < length; ++k)
    for (std::size_t d = 0; d < channels; ++d) {
      const T dl = delta[k * channels + d];
      if (!(dl > T(0))) {
        throw ParameterError("discretize_zoh: delta must be positive (token " +
                             std::to_string(k) + ", channel " + std::to_string(d) + ")");
      }
      for (std::size_t n = 0; n < state; ++n) {
        const T av = a[d * state + n];
        const std::size_t i = (k * channels + d) * state + n;
        const T gain = zoh_input_gain(dl, av);
        out.a_bar[i] = zoh_transition(dl, av);
        out.b_bar[i] = gain * b[k * state + n];
        if (gains) (*gains)[i] = gain;
      }
    }
  return out;
}

std::uint64_t scan_flop_count(std::size_t length, std::size_t channels,
                              std::size_t state) {
  const std::uint64_t J = length, C = channels, N = state;
  return 3 * J * C * N + J * C * N * N;
}

template <std::floating_point T>
std::vector<T> scan_sequential(const DiscreteSsm<T>& disc, std::span<const T> c,
                               std::span<const T> d_skip, std::span<const T> x,
                               std::vector<T>* states) {
  check_scan_inputs(disc, c, d_skip, x);
  const std::size_t J = disc.length, C = disc.channels, N = disc.state;
  std::vector<T> h_all(J * C * N);
  std::vector<T> h(C * N, T(0));
  for (std::size_t k = 0; k < J; ++k) {
    for (std::size_t d = 0; d < C; ++d) {
      const T xv = x[k * C + d];
      for (std::size_t n = 0; n < N; ++n) {
        const std::size_t i = (k * C + d) * N + n;
        T& hv = h[d * N + n];
        hv = disc.a_bar[i] * hv + disc.b_bar[i] * xv;
        if (!std::isfinite(hv)) {
          throw NumericError("scan: non-finite state at token " + std::to_string(k),
                             static_cast<std::ptrdiff_t>(k));
        }
        h_all[i] = hv;
      }
    }
  }
  std::vector<T> y(J * C);
  emit_outputs(disc, c, d_skip, x, h_all, y);
  mac_counter().add(scan_flop_count(J, C, N));
  if (states) *states = std::move(h_all);
  return y;
}

template <std::floating_point T>
std::vector<T> scan_parallel(const DiscreteSsm<T>& disc, std::span<const T> c,
                             std::span<const T> d_skip, std::span<const T> x,
                             const ScanOptions& options, std::vector<T>* states) {
  check_scan_inputs(disc, c, d_skip, x);
  const std::size_t J = disc.length, C = disc.channels, N = disc.state;
  const std::size_t P = std::bit_ceil(std::max<std::size_t>(J, 1));
  std::vector<T> h_all(J * C * N);
  std::vector<std::size_t> first_bad(C, J);

  // Each channel's N state lanes sweep together, so the inner loops are
  // contiguous; every lane sees the same operation order as a scalar sweep.
  parallel_for(
      C,
      [&](std::size_t begin, std::size_t end) {
        // Gather and scatter walk tokens in the outer loop so the [J, C, N]
        // arrays stream once per worker instead of once per channel.
        const std::size_t width = end - begin;
        std::vector<T> ea(width * P * N), eb(width * P * N);
        for (std::size_t k = 0; k < J; ++k)
          for (std::size_t d = begin; d < end; ++d) {
            const std::size_t i = (k * C + d) * N;
            const std::size_t o = ((d - begin) * P + k) * N;
            const T xv = x[k * C + d];
            for (std::size_t n = 0; n < N; ++n) {
              ea[o + n] = disc.a_bar[i + n];
              eb[o + n] = disc.b_bar[i + n] * xv;
            }
          }
        for (std::size_t d = begin; d < end; ++d) {
          T* const ca = ea.data() + (d - begin) * P * N;
          T* const cb = eb.data() + (d - begin) * P * N;
          std::fill(ca + J * N, ca + P * N, T(1));
          std::fill(cb + J * N, cb + P * N, T(0));

          // Up-sweep: node i accumulates its left sibling subtree (earlier
          // tokens) composed under its own (later tokens).
          for (std::size_t stride = 1; stride < P; stride *= 2) {
            for (std::size_t i = 2 * stride - 1; i < P; i += 2 * stride) {
              T* ai = ca + i * N;
              T* bi = cb + i * N;
              const T* al = ca + (i - stride) * N;
              const T* bl = cb + (i - stride) * N;
              for (std::size_t n = 0; n < N; ++n) {
                bi[n] = ai[n] * bl[n] + bi[n];
                ai[n] = ai[n] * al[n];
              }
            }
          }
          // Down-sweep to exclusive prefixes. The left child inherits the
          // parent prefix; the right child gets the left subtree applied
          // after the parent prefix.
          std::fill(ca + (P - 1) * N, ca + P * N, T(1));
          std::fill(cb + (P - 1) * N, cb + P * N, T(0));
          for (std::size_t stride = P / 2; stride >= 1; stride /= 2) {
            for (std::size_t i = 2 * stride - 1; i < P; i += 2 * stride) {
              T* ai = ca + i * N;
              T* bi = cb + i * N;
              T* al = ca + (i - stride) * N;
              T* bl = cb + (i - stride) * N;
              for (std::size_t n = 0; n < N; ++n) {
                const T left_a = al[n];
                const T left_b = bl[n];
                al[n] = ai[n];
                bl[n] = bi[n];
                bi[n] = left_a * bi[n] + left_b;
                ai[n] = left_a * ai[n];
              }
            }
          }
        }
        // Exclusive prefix maps h_{-1} = 0 to h_{k-1} = eb[k].
        for (std::size_t k = 0; k < J; ++k)
          for (std::size_t d = begin; d < end; ++d) {
            const std::size_t i = (k * C + d) * N;
            const T xv = x[k * C + d];
            const T* pk = eb.data() + ((d - begin) * P + k) * N;
            T* hk = h_all.data() + i;
            bool finite = true;
            for (std::size_t n = 0; n < N; ++n) {
              hk[n] = disc.a_bar[i + n] * pk[n] + disc.b_bar[i + n] * xv;
              finite = finite && std::isfinite(hk[n]);
            }
            if (!finite && first_bad[d] == J) first_bad[d] = k;
          }
      },
      options.threads);

  const std::size_t bad = *std::min_element(first_bad.begin(), first_bad.end());
  if (bad < J) {
    throw NumericError("scan: non-finite state at token " + std::to_string(bad),
                       static_cast<std::ptrdiff_t>(bad));
  }
  std::vector<T> y(J * C);
  emit_outputs(disc, c, d_skip, x, h_all, y);
  mac_counter().add(scan_flop_count(J, C, N));
  if (states) *states = std::move(h_all);
  return y;
}

#define MATTEN_INSTANTIATE_SCAN(T)                                                 \
  template T zoh_transition<T>(T, T);                                              \
  template T zoh_input_gain<T>(T, T);                                              \
  template DiscreteSsm<T> discretize_zoh<T>(std::span<const T>, std::span<const T>, \
                                            std::span<const T>, std::size_t,       \
                                            std::size_t, std::size_t,              \
                                            std::vector<T>*);                      \
  template std::vector<T> scan_sequential<T>(const DiscreteSsm<T>&,                \
                                             std::span<const T>, std::span<const T>, \
                                             std::span<const T>, std::vector<T>*); \
  template std::vector<T> scan_parallel<T>(const DiscreteSsm<T>&, std::span<const T>, \
                                           std::span<const T>, std::span<const T>, \
                                           const ScanOptions&, std::vector<T>*);

MATTEN_INSTANTIATE_SCAN(float)
MATTEN_INSTANTIATE_SCAN(double)

#undef MATTEN_INSTANTIATE_SCAN

}  // namespace matten::ssm
