#include "matten/init.hpp"

#include <cmath>

namespace matten {

Tensor uniform(Shape shape, double lo, double hi, std::mt19937_64& rng, DType dtype) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> values(numel(shape));
  for (auto& v : values) v = dist(rng);
  return Tensor::from_vector(std::move(shape), std::move(values), dtype).set_requires_grad();
}

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng,
                      DType dtype) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return uniform({fan_in, fan_out}, -bound, bound, rng, dtype);
}

Tensor parameter(Shape shape, double value, DType dtype) {
  return Tensor::full(std::move(shape), value, dtype).set_requires_grad();
}

}  // namespace matten
