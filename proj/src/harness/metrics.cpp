#include "matten/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "matten/error.hpp"

namespace matten {

namespace {

struct VideoShape {
  std::size_t count, frames, frame_size;
};

VideoShape video_shape(const Tensor& v, const char* what) {
  if (v.rank() != 5) throw DimensionError(std::string(what) + ": expected [count, F, H, W, C], got " + to_string(v.shape()));
  return {v.extent(0), v.extent(1), v.extent(2) * v.extent(3) * v.extent(4)};
}

}  // namespace

double inter_frame_difference(const Tensor& videos) {
  const auto s = video_shape(videos, "inter_frame_difference");
  if (s.frames < 2 || s.count == 0) return 0.0;
  const auto v = videos.data();
  double total = 0.0;
  for (std::size_t q = 0; q < s.count; ++q)
    for (std::size_t f = 0; f + 1 < s.frames; ++f) {
      const double* a = v.data() + (q * s.frames + f) * s.frame_size;
      const double* b = a + s.frame_size;
      for (std::size_t i = 0; i < s.frame_size; ++i) total += std::abs(b[i] - a[i]);
    }
  return total / static_cast<double>(s.count * (s.frames - 1) * s.frame_size);
}

double histogram_distance(const Tensor& a, const Tensor& b, std::size_t bins) {
  if (bins == 0) throw ParameterError("histogram_distance: bins must be positive");
  const auto hist = [bins](std::span<const double> v) {
    std::vector<double> h(bins, 0.0);
    for (double x : v) {
      const double u = std::clamp((x + 1.0) / 2.0, 0.0, 1.0);
      h[std::min(bins - 1, static_cast<std::size_t>(u * static_cast<double>(bins)))] += 1.0;
    }
    for (auto& c : h) c /= static_cast<double>(std::max<std::size_t>(v.size(), 1));
    return h;
  };
  const auto ha = hist(a.data()), hb = hist(b.data());
  double d = 0.0;
  for (std::size_t i = 0; i < bins; ++i) d += std::abs(ha[i] - hb[i]);
  return d / 2.0;
}

ToyMetrics toy_metrics(const Tensor& samples, const Tensor& reference) {
  const auto s = video_shape(samples, "toy_metrics samples");
  const auto r = video_shape(reference, "toy_metrics reference");
  if (!std::equal(samples.shape().begin() + 1, samples.shape().end(), reference.shape().begin() + 1,
                  reference.shape().end())) {
    throw DimensionError("toy_metrics: sample videos " + to_string(samples.shape()) + " and reference " +
                         to_string(reference.shape()) + " differ past the count axis");
  }
  if (r.count == 0) throw DimensionError("toy_metrics: empty reference");
  ToyMetrics m;
  m.inter_frame = inter_frame_difference(samples);
  m.reference_inter_frame = inter_frame_difference(reference);
  m.histogram_distance = histogram_distance(samples, reference);
  const std::size_t frames = s.count * s.frames, refs = r.count * r.frames, n = s.frame_size;
  if (frames == 0) return m;
  const auto sv = samples.data(), rv = reference.data();
  for (std::size_t i = 0; i < frames; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < refs && best > 0.0; ++j) {
      double e = 0.0;
      for (std::size_t p = 0; p < n && e < best * static_cast<double>(n); ++p) {
        const double diff = sv[i * n + p] - rv[j * n + p];
        e += diff * diff;
      }
      best = std::min(best, e / static_cast<double>(n));
    }
    m.mse += best;
    m.psnr += best > 0.0 ? std::min(kPsnrCap, 10.0 * std::log10(4.0 / best)) : kPsnrCap;
  }
  m.mse /= static_cast<double>(frames);
  m.psnr /= static_cast<double>(frames);
  return m;
}

double class_separation(const Tensor& videos, std::span<const std::size_t> classes) {
  const auto s = video_shape(videos, "class_separation");
  if (classes.size() != s.count) throw DimensionError("class_separation: need one class per video");
  std::map<std::size_t, std::vector<double>> means;
  const auto v = videos.data();
  const std::size_t per = s.frames * s.frame_size;
  for (std::size_t q = 0; q < s.count; ++q) {
    double t = 0.0;
    for (std::size_t i = 0; i < per; ++i) t += v[q * per + i];
    means[classes[q]].push_back(t / static_cast<double>(per));
  }
  if (means.size() < 2) throw DimensionError("class_separation: need samples from at least two classes");
  std::vector<double> centre;
  double ss = 0.0;
  std::size_t dof = 0;
  for (const auto& [k, xs] : means) {
    double mu = 0.0;
    for (double x : xs) mu += x;
    mu /= static_cast<double>(xs.size());
    for (double x : xs) ss += (x - mu) * (x - mu);
    dof += xs.size() - 1;
    centre.push_back(mu);
  }
  double gap = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < centre.size(); ++i)
    for (std::size_t j = i + 1; j < centre.size(); ++j) gap = std::min(gap, std::abs(centre[i] - centre[j]));
  const double pooled = dof > 0 ? std::sqrt(ss / static_cast<double>(dof)) : 0.0;
  if (pooled == 0.0) return gap > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
  return gap / pooled;
}

double loglog_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw DimensionError("loglog_slope: need two or more (x, y) pairs");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0 && y[i] > 0.0)) throw ParameterError("loglog_slope: values must be positive");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(y.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  if (sxx == 0.0) throw ParameterError("loglog_slope: x values are all equal");
  return sxy / sxx;
}

}  // namespace matten
