#include "matten/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "gemm.hpp"
#include "matten/error.hpp"

namespace matten {

namespace {

bool is_suffix(const Shape& big, const Shape& small) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

void require_suffix(const Tensor& a, const Tensor& b, const char* op) {
  if (!is_suffix(a.shape(), b.shape())) {
    throw DimensionError(std::string(op) + ": shape " + to_string(b.shape()) +
                         " does not broadcast against " + to_string(a.shape()));
  }
}

// f(i, i % nb) for i < n, with nb dividing n.
template <typename F>
void for_broadcast(std::size_t n, std::size_t nb, F f) {
  for (std::size_t base = 0; base < n; base += nb)
    for (std::size_t j = 0; j < nb; ++j) f(base + j, j);
}

using SharedValues = std::shared_ptr<const std::vector<double>>;

SharedValues share(std::vector<double> v) {
  return std::make_shared<const std::vector<double>>(std::move(v));
}

// Elementwise unary op. `deriv(x, y)` is dy/dx given input x and output y.
template <typename F, typename D>
Tensor unary(const Tensor& x, F f, D deriv) {
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  auto kept = share(out);
  return Tensor::make_op(
      x.shape(), x.dtype(), std::move(out), {x},
      [x, kept, deriv](std::span<const double> g, GradSpans gi) {
        const auto in = x.data();
        const auto& y = *kept;
        for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i] * deriv(in[i], y[i]);
      });
}

double sigmoid_value(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

double softplus_value(double v) {
  if (v > 30.0) return v;
  return std::log1p(std::exp(v));
}

struct AxisSplit {
  std::size_t outer = 1, length = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.length = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

// Gather op: out[i] = x[index[i]]; backward scatters.
Tensor gather(const Tensor& x, Shape shape,
              std::shared_ptr<const std::vector<std::size_t>> index) {
  const auto in = x.data();
  std::vector<double> out(index->size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[(*index)[i]];
  return Tensor::make_op(std::move(shape), x.dtype(), std::move(out), {x},
                         [index](std::span<const double> g, GradSpans gi) {
                           for (std::size_t i = 0; i < g.size(); ++i)
                             gi[0][(*index)[i]] += g[i];
                         });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_suffix(a, b, "add");
  const auto x = a.data();
  const auto y = b.data();
  const std::size_t nb = y.size();
  std::vector<double> out(x.size());
  for_broadcast(x.size(), nb, [&](std::size_t i, std::size_t j) { out[i] = x[i] + y[j]; });
  return Tensor::make_op(a.shape(), promote(a.dtype(), b.dtype()), std::move(out),
                         {a, b}, [nb](std::span<const double> g, GradSpans gi) {
                           if (!gi[0].empty())
                             for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
                           if (!gi[1].empty())
                             for_broadcast(g.size(), nb, [&](std::size_t i, std::size_t j) { gi[1][j] += g[i]; });
                         });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_suffix(a, b, "sub");
  const auto x = a.data();
  const auto y = b.data();
  const std::size_t nb = y.size();
  std::vector<double> out(x.size());
  for_broadcast(x.size(), nb, [&](std::size_t i, std::size_t j) { out[i] = x[i] - y[j]; });
  return Tensor::make_op(a.shape(), promote(a.dtype(), b.dtype()), std::move(out),
                         {a, b}, [nb](std::span<const double> g, GradSpans gi) {
                           if (!gi[0].empty())
                             for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
                           if (!gi[1].empty())
                             for_broadcast(g.size(), nb, [&](std::size_t i, std::size_t j) { gi[1][j] -= g[i]; });
                         });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_suffix(a, b, "mul");
  const auto x = a.data();
  const auto y = b.data();
  const std::size_t nb = y.size();
  std::vector<double> out(x.size());
  for_broadcast(x.size(), nb, [&](std::size_t i, std::size_t j) { out[i] = x[i] * y[j]; });
  return Tensor::make_op(a.shape(), promote(a.dtype(), b.dtype()), std::move(out),
                         {a, b}, [a, b, nb](std::span<const double> g, GradSpans gi) {
                           const auto x = a.data();
                           const auto y = b.data();
                           if (!gi[0].empty())
                             for_broadcast(g.size(), nb, [&](std::size_t i, std::size_t j) { gi[0][i] += g[i] * y[j]; });
                           if (!gi[1].empty())
                             for_broadcast(g.size(), nb, [&](std::size_t i, std::size_t j) { gi[1][j] += g[i] * x[i]; });
                         });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(a, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Tensor scale(const Tensor& a, double s) {
  return unary(a, [s](double v) { return v * s; }, [s](double, double) { return s; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
    throw DimensionError("matmul: cannot contract " + to_string(a.shape()) +
                         " with " + to_string(b.shape()));
  }
  const std::size_t m = a.extent(0), k = a.extent(1), p = b.extent(1);
  std::vector<double> out(m * p, 0.0);
  detail::gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, p);
  mac_counter().add(m * k * p);
  return Tensor::make_op({m, p}, promote(a.dtype(), b.dtype()), std::move(out), {a, b},
                         [a, b, m, k, p](std::span<const double> g, GradSpans gi) {
                           if (!gi[0].empty())
                             detail::gemm_nt(g.data(), b.data().data(), gi[0].data(), m, p, k);
                           if (!gi[1].empty())
                             detail::gemm_tn(a.data().data(), g.data(), gi[1].data(), k, m, p);
                         });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.extent(0) != b.extent(0) ||
      a.extent(2) != b.extent(1)) {
    throw DimensionError("bmm: cannot contract " + to_string(a.shape()) +
                         " with " + to_string(b.shape()));
  }
  const std::size_t n = a.extent(0), m = a.extent(1), k = a.extent(2),
                    p = b.extent(2);
  std::vector<double> out(n * m * p, 0.0);
  const double* x = a.data().data();
  const double* y = b.data().data();
  for (std::size_t i = 0; i < n; ++i)
    detail::gemm_nn(x + i * m * k, y + i * k * p, out.data() + i * m * p, m, k, p);
  mac_counter().add(n * m * k * p);
  return Tensor::make_op(
      {n, m, p}, promote(a.dtype(), b.dtype()), std::move(out), {a, b},
      [a, b, n, m, k, p](std::span<const double> g, GradSpans gi) {
        const double* x = a.data().data();
        const double* y = b.data().data();
        for (std::size_t i = 0; i < n; ++i) {
          if (!gi[0].empty())
            detail::gemm_nt(g.data() + i * m * p, y + i * k * p,
                            gi[0].data() + i * m * k, m, p, k);
          if (!gi[1].empty())
            detail::gemm_tn(x + i * m * k, g.data() + i * m * p,
                            gi[1].data() + i * k * p, k, m, p);
        }
      });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  if (w.rank() != 2 || x.rank() == 0 || x.extent(x.rank() - 1) != w.extent(0)) {
    throw DimensionError("linear: input " + to_string(x.shape()) +
                         " does not match weight " + to_string(w.shape()));
  }
  const std::size_t k = w.extent(0), p = w.extent(1);
  const std::size_t rows = x.numel() / k;
  Shape out_shape = x.shape();
  out_shape.back() = p;
  Tensor y = matmul(reshape(x, {rows, k}), w);
  if (bias.defined()) y = add(y, bias);
  return reshape(y, std::move(out_shape));
}

Tensor exp(const Tensor& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  for (double v : x.data()) {
    if (!(v > 0.0)) throw ParameterError("log: argument must be positive");
  }
  return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor square(const Tensor& x) {
  return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}

Tensor silu(const Tensor& x) {
  const auto in = x.data();
  auto sig = std::make_shared<std::vector<double>>(in.size());
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    (*sig)[i] = sigmoid_value(in[i]);
    out[i] = in[i] * (*sig)[i];
  }
  return Tensor::make_op(x.shape(), x.dtype(), std::move(out), {x},
                         [x, sig](std::span<const double> g, GradSpans gi) {
                           const auto in = x.data();
                           const auto& s = *sig;
                           for (std::size_t i = 0; i < g.size(); ++i)
                             gi[0][i] += g[i] * s[i] * (1.0 + in[i] * (1.0 - s[i]));
                         });
}

Tensor softplus(const Tensor& x) {
  return unary(x, softplus_value, [](double v, double) { return sigmoid_value(v); });
}

Tensor softmax(const Tensor& x) {
  if (x.rank() == 0) throw DimensionError("softmax needs at least one axis");
  const std::size_t d = x.extent(x.rank() - 1);
  const std::size_t rows = x.numel() / d;
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = in.data() + r * d;
    double* dst = out.data() + r * d;
    const double mx = *std::max_element(src, src + d);
    double total = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      dst[i] = std::exp(src[i] - mx);
      total += dst[i];
    }
    for (std::size_t i = 0; i < d; ++i) dst[i] /= total;
  }
  auto kept = share(out);
  return Tensor::make_op(x.shape(), x.dtype(), std::move(out), {x},
                         [kept, d, rows](std::span<const double> g, GradSpans gi) {
                           const auto& y = *kept;
                           for (std::size_t r = 0; r < rows; ++r) {
                             const std::size_t o = r * d;
                             double dot = 0.0;
                             for (std::size_t i = 0; i < d; ++i) dot += g[o + i] * y[o + i];
                             for (std::size_t i = 0; i < d; ++i)
                               gi[0][o + i] += y[o + i] * (g[o + i] - dot);
                           }
                         });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  if (x.rank() == 0) throw DimensionError("layer_norm needs at least one axis");
  if (!(eps > 0.0)) throw ParameterError("layer_norm: eps must be positive");
  const std::size_t d = x.extent(x.rank() - 1);
  for (const Tensor* t : {&gain, &bias}) {
    if (t->defined() && t->shape() != Shape{d}) {
      throw DimensionError("layer_norm: affine parameter " + to_string(t->shape()) +
                           " does not match feature extent " + std::to_string(d));
    }
  }
  const std::size_t rows = x.numel() / d;
  const auto in = x.data();
  std::vector<double> xhat(in.size());
  std::vector<double> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = in.data() + r * d;
    double mu = 0.0;
    for (std::size_t i = 0; i < d; ++i) mu += src[i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (src[i] - mu) * (src[i] - mu);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < d; ++i) xhat[r * d + i] = (src[i] - mu) * rstd[r];
  }
  std::vector<double> out = xhat;
  DType dtype = x.dtype();
  if (gain.defined()) {
    const auto gv = gain.data();
    for_broadcast(out.size(), d, [&](std::size_t i, std::size_t j) { out[i] *= gv[j]; });
    dtype = promote(dtype, gain.dtype());
  }
  if (bias.defined()) {
    const auto bv = bias.data();
    for_broadcast(out.size(), d, [&](std::size_t i, std::size_t j) { out[i] += bv[j]; });
    dtype = promote(dtype, bias.dtype());
  }
  auto kept_xhat = share(std::move(xhat));
  auto kept_rstd = share(std::move(rstd));
  const bool has_gain = gain.defined();
  const bool has_bias = bias.defined();
  std::vector<Tensor> inputs{x};
  if (has_gain) inputs.push_back(gain);
  if (has_bias) inputs.push_back(bias);
  return Tensor::make_op(
      x.shape(), dtype, std::move(out), std::move(inputs),
      [gain, kept_xhat, kept_rstd, d, rows, has_gain, has_bias](
          std::span<const double> g, GradSpans gi) {
        const auto& xh = *kept_xhat;
        const auto& rs = *kept_rstd;
        const std::size_t gain_slot = 1;
        const std::size_t bias_slot = has_gain ? 2 : 1;
        std::vector<double> gxh(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t o = r * d;
          for (std::size_t i = 0; i < d; ++i)
            gxh[i] = has_gain ? g[o + i] * gain.data()[i] : g[o + i];
          if (has_gain && !gi[gain_slot].empty())
            for (std::size_t i = 0; i < d; ++i) gi[gain_slot][i] += g[o + i] * xh[o + i];
          if (has_bias && !gi[bias_slot].empty())
            for (std::size_t i = 0; i < d; ++i) gi[bias_slot][i] += g[o + i];
          if (gi[0].empty()) continue;
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t i = 0; i < d; ++i) {
            m1 += gxh[i];
            m2 += gxh[i] * xh[o + i];
          }
          m1 /= static_cast<double>(d);
          m2 /= static_cast<double>(d);
          for (std::size_t i = 0; i < d; ++i)
            gi[0][o + i] += rs[r] * (gxh[i] - m1 - xh[o + i] * m2);
        }
      });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (matten::numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + to_string(x.shape()) + " -> " +
                         to_string(shape) + " changes the element count");
  }
  auto values = x.to_vector();
  return Tensor::make_op(std::move(shape), x.dtype(), std::move(values), {x},
                         [](std::span<const double> g, GradSpans gi) {
                           for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
                         });
}

Tensor permute(const Tensor& x, std::span<const std::size_t> axes) {
  const auto& in_shape = x.shape();
  const std::size_t r = in_shape.size();
  std::vector<bool> seen(r, false);
  if (axes.size() != r) {
    throw DimensionError("permute: " + std::to_string(axes.size()) +
                         " axes for rank " + std::to_string(r));
  }
  for (auto a : axes) {
    if (a >= r || seen[a]) throw DimensionError("permute: axes are not a permutation");
    seen[a] = true;
  }
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in_shape[i];
  Shape out_shape(r);
  std::vector<std::size_t> step(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = in_shape[axes[i]];
    step[i] = in_stride[axes[i]];
  }
  auto index = std::make_shared<std::vector<std::size_t>>(x.numel());
  std::vector<std::size_t> counter(r, 0);
  std::size_t src = 0;
  for (std::size_t o = 0; o < index->size(); ++o) {
    (*index)[o] = src;
    for (std::size_t i = r; i-- > 0;) {
      if (++counter[i] < out_shape[i]) {
        src += step[i];
        break;
      }
      src -= step[i] * (out_shape[i] - 1);
      counter[i] = 0;
    }
  }
  return gather(x, std::move(out_shape), std::move(index));
}

Tensor flip(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) throw DimensionError("flip: axis out of range");
  const auto s = split_at(x.shape(), axis);
  auto index = std::make_shared<std::vector<std::size_t>>(x.numel());
  std::size_t o = 0;
  for (std::size_t a = 0; a < s.outer; ++a)
    for (std::size_t l = 0; l < s.length; ++l)
      for (std::size_t i = 0; i < s.inner; ++i)
        (*index)[o++] = (a * s.length + (s.length - 1 - l)) * s.inner + i;
  return gather(x, x.shape(), std::move(index));
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin,
             std::size_t end) {
  if (axis >= x.rank() || begin >= end || end > x.extent(axis)) {
    throw DimensionError("slice: [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") on axis " + std::to_string(axis) +
                         " of " + to_string(x.shape()));
  }
  const auto s = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  auto index = std::make_shared<std::vector<std::size_t>>(matten::numel(out_shape));
  std::size_t o = 0;
  for (std::size_t a = 0; a < s.outer; ++a)
    for (std::size_t l = begin; l < end; ++l)
      for (std::size_t i = 0; i < s.inner; ++i)
        (*index)[o++] = (a * s.length + l) * s.inner + i;
  return gather(x, std::move(out_shape), std::move(index));
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  Shape out_shape = parts[0].shape();
  if (axis >= out_shape.size()) throw DimensionError("concat: axis out of range");
  out_shape[axis] = 0;
  DType dtype = parts[0].dtype();
  for (const auto& p : parts) {
    Shape probe = p.shape();
    if (probe.size() != out_shape.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t i = 0; i < probe.size(); ++i) {
      if (i != axis && probe[i] != out_shape[i])
        throw DimensionError("concat: incompatible " + to_string(p.shape()));
    }
    out_shape[axis] += probe[axis];
    dtype = promote(dtype, p.dtype());
  }
  const auto s = split_at(out_shape, axis);
  std::vector<double> out(matten::numel(out_shape));
  auto offsets = std::make_shared<std::vector<std::size_t>>();
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets->push_back(offset);
    const std::size_t len = p.extent(axis);
    const auto src = p.data();
    for (std::size_t a = 0; a < s.outer; ++a)
      std::copy_n(src.data() + a * len * s.inner, len * s.inner,
                  out.data() + (a * s.length + offset) * s.inner);
    offset += len;
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  std::vector<std::size_t> lengths;
  for (const auto& p : parts) lengths.push_back(p.extent(axis));
  return Tensor::make_op(
      std::move(out_shape), dtype, std::move(out), std::move(inputs),
      [s, offsets, lengths](std::span<const double> g, GradSpans gi) {
        for (std::size_t k = 0; k < lengths.size(); ++k) {
          if (gi[k].empty()) continue;
          const std::size_t len = lengths[k];
          for (std::size_t a = 0; a < s.outer; ++a)
            for (std::size_t i = 0; i < len * s.inner; ++i)
              gi[k][a * len * s.inner + i] +=
                  g[(a * s.length + (*offsets)[k]) * s.inner + i];
        }
      });
}

Tensor broadcast_to(const Tensor& x, Shape shape) {
  if (!is_suffix(shape, x.shape())) {
    throw DimensionError("broadcast_to: " + to_string(x.shape()) +
                         " is not a suffix of " + to_string(shape));
  }
  const std::size_t n = x.numel();
  const auto in = x.data();
  std::vector<double> out(matten::numel(shape));
  for_broadcast(out.size(), n, [&](std::size_t i, std::size_t j) { out[i] = in[j]; });
  return Tensor::make_op(std::move(shape), x.dtype(), std::move(out), {x},
                         [n](std::span<const double> g, GradSpans gi) {
                           for_broadcast(g.size(), n, [&](std::size_t i, std::size_t j) { gi[0][j] += g[i]; });
                         });
}

Tensor sum(const Tensor& x) {
  const auto in = x.data();
  const double total = std::accumulate(in.begin(), in.end(), 0.0);
  return Tensor::make_op({}, x.dtype(), {total}, {x},
                         [](std::span<const double> g, GradSpans gi) {
                           for (auto& v : gi[0]) v += g[0];
                         });
}

Tensor mean(const Tensor& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum_axis(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) throw DimensionError("sum_axis: axis out of range");
  const auto s = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  const auto in = x.data();
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t a = 0; a < s.outer; ++a)
    for (std::size_t l = 0; l < s.length; ++l)
      for (std::size_t i = 0; i < s.inner; ++i)
        out[a * s.inner + i] += in[(a * s.length + l) * s.inner + i];
  return Tensor::make_op(std::move(out_shape), x.dtype(), std::move(out), {x},
                         [s](std::span<const double> g, GradSpans gi) {
                           for (std::size_t a = 0; a < s.outer; ++a)
                             for (std::size_t l = 0; l < s.length; ++l)
                               for (std::size_t i = 0; i < s.inner; ++i)
                                 gi[0][(a * s.length + l) * s.inner + i] += g[a * s.inner + i];
                         });
}

Tensor expand_axis(const Tensor& x, std::size_t axis, std::size_t count) {
  if (axis > x.rank()) throw DimensionError("expand_axis: axis out of range");
  if (count == 0) throw DimensionError("expand_axis: count must be positive");
  Shape out_shape = x.shape();
  out_shape.insert(out_shape.begin() + static_cast<std::ptrdiff_t>(axis), count);
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.extent(i);
  for (std::size_t i = axis; i < x.rank(); ++i) inner *= x.extent(i);
  const auto in = x.data();
  std::vector<double> out(outer * count * inner);
  for (std::size_t a = 0; a < outer; ++a)
    for (std::size_t c = 0; c < count; ++c)
      std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(a * inner), inner,
                  out.begin() + static_cast<std::ptrdiff_t>((a * count + c) * inner));
  return Tensor::make_op(std::move(out_shape), x.dtype(), std::move(out), {x},
                         [outer, count, inner](std::span<const double> g, GradSpans gi) {
                           for (std::size_t a = 0; a < outer; ++a)
                             for (std::size_t c = 0; c < count; ++c)
                               for (std::size_t i = 0; i < inner; ++i)
                                 gi[0][a * inner + i] += g[(a * count + c) * inner + i];
                         });
}

Tensor causal_conv1d(const Tensor& x, const Tensor& w, const Tensor& bias) {
  if (x.rank() != 3 || w.rank() != 2 || w.extent(0) != x.extent(2) ||
      bias.shape() != Shape{x.extent(2)}) {
    throw DimensionError("causal_conv1d: x " + to_string(x.shape()) + ", w " +
                         to_string(w.shape()) + ", bias " + to_string(bias.shape()));
  }
  const std::size_t seqs = x.extent(0), len = x.extent(1), ch = x.extent(2),
                    width = w.extent(1);
  const auto xv = x.data();
  const auto wv = w.data();
  const auto bv = bias.data();
  std::vector<double> out(xv.size());
  for (std::size_t s = 0; s < seqs; ++s)
    for (std::size_t j = 0; j < len; ++j)
      for (std::size_t c = 0; c < ch; ++c) {
        double acc = bv[c];
        for (std::size_t k = 0; k < width; ++k) {
          const std::size_t lag = width - 1 - k;
          if (lag > j) continue;
          acc += wv[c * width + k] * xv[(s * len + j - lag) * ch + c];
        }
        out[(s * len + j) * ch + c] = acc;
      }
  return Tensor::make_op(
      x.shape(), promote(x.dtype(), w.dtype()), std::move(out), {x, w, bias},
      [x, w, seqs, len, ch, width](std::span<const double> g, GradSpans gi) {
        const auto xv = x.data();
        const auto wv = w.data();
        for (std::size_t s = 0; s < seqs; ++s)
          for (std::size_t j = 0; j < len; ++j)
            for (std::size_t c = 0; c < ch; ++c) {
              const double go = g[(s * len + j) * ch + c];
              if (!gi[2].empty()) gi[2][c] += go;
              for (std::size_t k = 0; k < width; ++k) {
                const std::size_t lag = width - 1 - k;
                if (lag > j) continue;
                const std::size_t src = (s * len + j - lag) * ch + c;
                if (!gi[0].empty()) gi[0][src] += go * wv[c * width + k];
                if (!gi[1].empty()) gi[1][c * width + k] += go * xv[src];
              }
            }
      });
}

Tensor take_row(const Tensor& table, std::size_t index) {
  if (table.rank() != 2) throw DimensionError("take_row: table must be rank 2");
  if (index >= table.extent(0)) {
    throw IndexError("take_row: row " + std::to_string(index) + " of " +
                     std::to_string(table.extent(0)));
  }
  const std::size_t d = table.extent(1);
  auto rows = std::make_shared<std::vector<std::size_t>>(d);
  std::iota(rows->begin(), rows->end(), index * d);
  return gather(table, {d}, std::move(rows));
}

Tensor mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mse: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  return mean(square(sub(a, b)));
}

}  // namespace matten
