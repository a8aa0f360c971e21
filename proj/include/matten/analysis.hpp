#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "matten/config.hpp"

namespace matten::analysis {

/// Counts are multiply-accumulates, the unit of the global MAC counter.
using Count = std::uint64_t;

/// 2 J^2 D: score and value products of one attention.
Count flops_sa(Count length, Count dim);
/// 4 J D^2.
Count flops_ffn(Count length, Count dim);
/// 3 J (2D) N + J (2D) N^2, expansion 2.
Count flops_ssm(Count length, Count dim, Count state);
/// Smallest J where 2 J^2 D equals the SSM cost: N^2 + 3N.
Count crossover_length(Count state);

struct LatentShape {
  std::size_t frames = 0, height = 0, width = 0, channels = 0;
};

/// Latent seen by the model for a pixel video encoded with a VAE of the
/// given downsampling factor.
LatentShape latent_for_pixels(std::size_t frames, std::size_t height, std::size_t width,
                              std::size_t factor = 8, std::size_t channels = 4);

struct CostEntry {
  std::string name;
  Count flops = 0;
  Count params = 0;
};

struct CostBreakdown {
  std::vector<CostEntry> entries;
  Count total_flops = 0;
  Count total_params = 0;
};

/// One forward pass on a single video. Counts the matrix products and scans
/// exactly as the runtime counter tallies them; elementwise work (norms,
/// activations, the depthwise convolution) is not counted.
CostBreakdown model_cost(const ModelConfig& config, const LatentShape& shape);

/// Closed-form parameter total of the constructed model.
Count param_count(const ModelConfig& config);

}  // namespace matten::analysis
