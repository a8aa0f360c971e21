#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <span>

#include "matten/tensor.hpp"

namespace testing {

inline matten::Tensor rand64(matten::Shape shape, std::mt19937_64& rng,
                             double stddev = 1.0) {
  return matten::Tensor::randn(std::move(shape), rng, stddev, matten::DType::F64)
      .set_requires_grad();
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline bool bit_equal(std::span<const double> a, std::span<const double> b) {
  return std::equal(a.begin(), a.end(), b.begin(), b.end());
}

}  // namespace testing
