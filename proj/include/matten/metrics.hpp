#pragma once

#include <span>
#include <vector>

#include "matten/tensor.hpp"

namespace matten {

/// Comparison of sampled videos against reference videos, both
/// [count, F, H, W, C] over the [-1, 1] pixel range.
struct ToyMetrics {
  /// Mean over sample frames of the MSE to the nearest reference frame.
  double mse = 0.0;
  /// Mean per-frame 10 log10(4 / MSE), 99 for an exact match.
  double psnr = 0.0;
  double inter_frame = 0.0;            // of the samples
  double reference_inter_frame = 0.0;  // of the reference
  double histogram_distance = 0.0;
};

inline constexpr double kPsnrCap = 99.0;
inline constexpr std::size_t kHistogramBins = 32;

/// DimensionError unless both are rank 5 with equal per-video extents.
ToyMetrics toy_metrics(const Tensor& samples, const Tensor& reference);

/// Mean |x[f+1] - x[f]| over every pixel and consecutive frame pair; 0 for
/// single-frame videos.
double inter_frame_difference(const Tensor& videos);

/// Half the L1 distance between normalized pixel histograms over [-1, 1]
/// (out-of-range values land in the end bins). Lies in [0, 1].
double histogram_distance(const Tensor& a, const Tensor& b, std::size_t bins = kHistogramBins);

/// Smallest gap between class means of the per-video pixel mean, divided by
/// the pooled within-class standard deviation. Needs two populated classes.
double class_separation(const Tensor& videos, std::span<const std::size_t> classes);

/// Least-squares slope of log y against log x.
double loglog_slope(std::span<const double> x, std::span<const double> y);

}  // namespace matten
