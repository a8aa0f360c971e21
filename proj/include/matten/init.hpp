#pragma once

#include <random>

#include "matten/tensor.hpp"

namespace matten {

/// U(-sqrt(6/(fan_in+fan_out)), +...) for a [fan_in, fan_out] weight.
Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng,
                      DType dtype = DType::F32);

Tensor uniform(Shape shape, double lo, double hi, std::mt19937_64& rng,
               DType dtype = DType::F32);

/// Trainable leaf filled with `value`.
Tensor parameter(Shape shape, double value, DType dtype = DType::F32);

}  // namespace matten
