#include <cmath>
#include <memory>
#include <string>

#include "matten/error.hpp"
#include "matten/ops.hpp"
#include "matten/ssm.hpp"

namespace matten::ssm {

namespace {

struct ScanShape {
  std::size_t seqs, length, inner, state;
};

ScanShape check_shapes(const Tensor& x, const Tensor& delta, const Tensor& a,
                       const Tensor& b, const Tensor& c, const Tensor& d_skip) {
  if (x.rank() != 3) throw DimensionError("scan: x must be [S, J, D_inner], got " + to_string(x.shape()));
  const ScanShape s{x.extent(0), x.extent(1), x.extent(2), a.rank() == 2 ? a.extent(1) : 0};
  if (delta.shape() != x.shape()) throw DimensionError("scan: delta shape " + to_string(delta.shape()) + " != x shape " + to_string(x.shape()));
  if (a.shape() != Shape{s.inner, s.state} || s.state == 0) {
    throw DimensionError("scan: A must be [D_inner, N], got " + to_string(a.shape()));
  }
  const Shape bc{s.seqs, s.length, s.state};
  if (b.shape() != bc) throw DimensionError("scan: B must be " + to_string(bc) + ", got " + to_string(b.shape()));
  if (c.shape() != bc) throw DimensionError("scan: C must be " + to_string(bc) + ", got " + to_string(c.shape()));
  if (d_skip.shape() != Shape{s.inner}) throw DimensionError("scan: D must be [D_inner], got " + to_string(d_skip.shape()));
  return s;
}

// Forward products kept for the backward pass, at the kernel precision.
template <typename T>
struct ScanCache {
  std::vector<T> states, a_bar, gain;  // [S, J, D_inner, N]
};

// Runs the kernels at precision T for every sequence. A null cache skips the
// products only the backward pass needs.
template <typename T>
void forward_all(const ScanShape& s, const Tensor& x, const Tensor& delta,
                 const Tensor& a, const Tensor& b, const Tensor& c,
                 const Tensor& d_skip, std::vector<double>& y, ScanCache<T>* cache) {
  const auto cast = [](std::span<const double> v) { return std::vector<T>(v.begin(), v.end()); };
  const std::vector<T> av = cast(a.data()), dv = cast(d_skip.data());
  const std::size_t xs = s.length * s.inner, bs = s.length * s.state, hs = xs * s.state;
  y.resize(s.seqs * xs);
  if (cache) {
    cache->states.resize(s.seqs * hs);
    cache->a_bar.resize(s.seqs * hs);
    cache->gain.resize(s.seqs * hs);
  }
  std::vector<T> h, gain;
  for (std::size_t q = 0; q < s.seqs; ++q) {
    const auto xq = cast(x.data().subspan(q * xs, xs));
    const auto dq = cast(delta.data().subspan(q * xs, xs));
    const auto bq = cast(b.data().subspan(q * bs, bs));
    const auto cq = cast(c.data().subspan(q * bs, bs));
    const auto disc = discretize_zoh<T>(av, bq, dq, s.length, s.inner, s.state, cache ? &gain : nullptr);
    std::vector<T> yq;
    try {
      yq = scan_parallel<T>(disc, cq, dv, xq, {}, cache ? &h : nullptr);
    } catch (const NumericError& e) {
      throw NumericError("scan: non-finite state in sequence " + std::to_string(q) +
                             " at token " + std::to_string(e.index()),
                         e.index());
    }
    std::copy(yq.begin(), yq.end(), y.begin() + static_cast<std::ptrdiff_t>(q * xs));
    if (!cache) continue;
    const auto at = static_cast<std::ptrdiff_t>(q * hs);
    std::copy(h.begin(), h.end(), cache->states.begin() + at);
    std::copy(disc.a_bar.begin(), disc.a_bar.end(), cache->a_bar.begin() + at);
    std::copy(gain.begin(), gain.end(), cache->gain.begin() + at);
  }
}

// Reverse-time adjoint of h_k = A_bar_k h_{k-1} + phi_k B_k x_k with
// y_k = C_k h_k + D x_k. Partials of phi = expm1(delta a) / a reuse the
// cached A_bar and phi.
template <typename T>
void backward_all(const ScanShape& s, const Tensor& x, const Tensor& delta,
                  const Tensor& a, const Tensor& b, const Tensor& c,
                  const Tensor& d_skip, const ScanCache<T>& cache,
                  std::span<const double> gy, GradSpans g) {
  const auto X = x.data(), DL = delta.data(), A = a.data(), B = b.data(), Cm = c.data(), Dk = d_skip.data();
  const std::size_t Di = s.inner, N = s.state;
  std::vector<double> carry(Di * N);  // A_bar_{k+1} * dL/dh_{k+1}
  std::vector<double> gx(N), gdl(N);
  for (std::size_t q = 0; q < s.seqs; ++q) {
    std::fill(carry.begin(), carry.end(), 0.0);
    for (std::size_t k = s.length; k-- > 0;) {
      const std::size_t kn0 = (q * s.length + k) * N;
      for (std::size_t d = 0; d < Di; ++d) {
        const std::size_t kd = (q * s.length + k) * Di + d;
        const std::size_t h0 = kd * N;
        const double dl = DL[kd], xv = X[kd], gyk = gy[kd];
        const double* ad = A.data() + d * N;
        double* cd = carry.data() + d * N;
        for (std::size_t n = 0; n < N; ++n) {
          const double av = ad[n];
          const double abar = cache.a_bar[h0 + n], phi = cache.gain[h0 + n];
          const double z = dl * av;
          const bool series = std::abs(z) < kSeriesThreshold;
          const double d_delta = series ? 1.0 + z : abar;
          const double d_a = series ? dl * dl / 2.0 : (z * abar - phi * av) / (av * av);
          const double gh = gyk * Cm[kn0 + n] + cd[n];
          const double hprev = k > 0 ? static_cast<double>(cache.states[h0 + n - Di * N]) : 0.0;
          const double g_abar = gh * hprev;
          const double g_bbar = gh * xv;
          gx[n] = gh * phi * B[kn0 + n];
          gdl[n] = g_abar * av * abar + g_bbar * B[kn0 + n] * d_delta;
          if (!g[2].empty()) g[2][d * N + n] += g_abar * dl * abar + g_bbar * B[kn0 + n] * d_a;
          if (!g[3].empty()) g[3][kn0 + n] += g_bbar * phi;
          if (!g[4].empty()) g[4][kn0 + n] += gyk * cache.states[h0 + n];
          cd[n] = abar * gh;
        }
        double sx = 0.0, sdl = 0.0;
        for (std::size_t n = 0; n < N; ++n) {
          sx += gx[n];
          sdl += gdl[n];
        }
        if (!g[0].empty()) g[0][kd] += sx;
        if (!g[1].empty()) g[1][kd] += sdl;
      }
    }
    for (std::size_t k = 0; k < s.length; ++k)
      for (std::size_t d = 0; d < Di; ++d) {
        const std::size_t kd = (q * s.length + k) * Di + d;
        if (!g[0].empty()) g[0][kd] += gy[kd] * Dk[d];
        if (!g[5].empty()) g[5][d] += gy[kd] * X[kd];
      }
  }
}

template <typename T>
Tensor scan_at(const ScanShape& s, DType dtype, const Tensor& x, const Tensor& delta, const Tensor& a,
               const Tensor& b, const Tensor& c, const Tensor& d_skip) {
  std::vector<double> y;
  bool taped = false;
  for (const Tensor* t : {&x, &delta, &a, &b, &c, &d_skip}) taped = taped || t->requires_grad();
  if (!grad_enabled() || !taped) {
    forward_all<T>(s, x, delta, a, b, c, d_skip, y, nullptr);
    return Tensor::make_op(x.shape(), dtype, std::move(y), {x, delta, a, b, c, d_skip}, {});
  }
  auto cache = std::make_shared<ScanCache<T>>();
  forward_all<T>(s, x, delta, a, b, c, d_skip, y, cache.get());
  auto backward = [s, x, delta, a, b, c, d_skip, cache](std::span<const double> gy, GradSpans g) {
    backward_all<T>(s, x, delta, a, b, c, d_skip, *cache, gy, g);
  };
  return Tensor::make_op(x.shape(), dtype, std::move(y), {x, delta, a, b, c, d_skip}, std::move(backward));
}

}  // namespace

Tensor scan(const Tensor& x, const Tensor& delta, const Tensor& a,
            const Tensor& b, const Tensor& c, const Tensor& d_skip) {
  const ScanShape s = check_shapes(x, delta, a, b, c, d_skip);
  DType dtype = x.dtype();
  for (const Tensor* t : {&delta, &a, &b, &c, &d_skip}) dtype = promote(dtype, t->dtype());
  if (dtype == DType::F32) return scan_at<float>(s, dtype, x, delta, a, b, c, d_skip);
  return scan_at<double>(s, dtype, x, delta, a, b, c, d_skip);
}

Tensor selective_scan(const SsmParams& p, const Tensor& x) {
  const std::size_t N = p.state();
  if (x.rank() != 3 || x.extent(2) != p.inner()) {
    throw DimensionError("selective_scan: x must be [S, J, " + std::to_string(p.inner()) +
                         "], got " + to_string(x.shape()));
  }
  const Tensor bc = linear(x, p.proj_bc);
  const Tensor b = slice(bc, 2, 0, N);
  const Tensor c = slice(bc, 2, N, 2 * N);
  const Tensor delta = softplus(linear(linear(x, p.proj_delta_in), p.proj_delta_out, p.delta_bias));
  const Tensor a = neg(exp(p.a_log));
  return scan(x, delta, a, b, c, p.d_skip);
}

Tensor direction_forward(const ScanDirection& dir, const Tensor& x) {
  return selective_scan(dir.ssm, silu(causal_conv1d(x, dir.conv_w, dir.conv_b)));
}

Tensor bidirectional_scan(const ScanDirection& fwd, const ScanDirection& bwd,
                          const Tensor& x) {
  return add(direction_forward(fwd, x), flip(direction_forward(bwd, flip(x, 1)), 1));
}

}  // namespace matten::ssm
