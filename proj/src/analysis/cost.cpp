#include "matten/analysis.hpp"

#include "matten/error.hpp"

namespace matten::analysis {

Count flops_sa(Count J, Count D) { return 2 * J * J * D; }
Count flops_ffn(Count J, Count D) { return 4 * J * D * D; }
Count flops_ssm(Count J, Count D, Count N) { return 3 * J * (2 * D) * N + J * (2 * D) * N * N; }
Count crossover_length(Count N) { return N * N + 3 * N; }

LatentShape latent_for_pixels(std::size_t frames, std::size_t height, std::size_t width,
                              std::size_t factor, std::size_t channels) {
  if (factor == 0 || height % factor != 0 || width % factor != 0) {
    throw DimensionError("pixel frame " + std::to_string(height) + "x" + std::to_string(width) +
                         " is not divisible by " + std::to_string(factor));
  }
  return {frames, height / factor, width / factor, channels};
}

namespace {

struct Dims {
  Count D, Di, N, R, K, P, C, classes, ffn;
  bool adan, bias;
};

Dims dims(const ModelConfig& c) {
  return {c.hidden,
          c.inner(),
          c.state,
          c.resolved_dt_rank(),
          c.conv_kernel,
          c.patch * c.patch,
          c.in_channels,
          c.num_classes,
          c.ffn_mult * c.hidden,
          c.conditioning == Conditioning::MAdaN,
          c.attention_bias};
}

bool is_mamba(SublayerKind k) {
  return k == SublayerKind::SpatialMamba || k == SublayerKind::TemporalMamba || k == SublayerKind::GlobalMamba;
}

Count mamba_params(const Dims& d) {
  const Count direction = d.Di * d.K + d.Di + d.Di * d.N + d.Di + d.Di * 2 * d.N + d.Di * d.R + d.R * d.Di + d.Di;
  const Count norm = d.adan ? 2 * 3 * d.D : 2 * d.D;
  return d.D * 2 * d.Di + 2 * direction + d.Di * d.D + norm;
}

Count attention_params(const Dims& d) {
  const Count proj = 4 * d.D * d.D + (d.bias ? 3 * d.D : 0);
  const Count ffn = d.D * d.ffn + d.ffn + d.ffn * d.D + d.D;
  const Count norm = d.adan ? 2 * 2 * 3 * d.D : 4 * d.D;
  return proj + ffn + norm;
}

Count sublayer_params(const Dims& d, SublayerKind k) { return is_mamba(k) ? mamba_params(d) : attention_params(d); }

// MACs of one sublayer applied to `rows` sequences of `len` tokens.
Count sublayer_flops(const Dims& d, SublayerKind k, Count rows, Count len) {
  if (is_mamba(k)) {
    const Count scan = 3 * len * d.Di * d.N + len * d.Di * d.N * d.N;
    const Count direction = len * d.Di * 2 * d.N + len * d.Di * d.R + len * d.R * d.Di + scan;
    return rows * (len * d.D * 2 * d.Di + 2 * direction + len * d.Di * d.D);
  }
  return rows * (4 * len * d.D * d.D + 2 * len * len * d.D + 2 * len * d.D * d.ffn);
}

}  // namespace

Count param_count(const ModelConfig& c) {
  c.validate();
  const Dims d = dims(c);
  Count n = d.P * d.C * d.D + d.D;      // patch embedding
  n += 2 * (d.D * d.D + d.D);           // timestep MLP
  n += d.classes * d.D;                 // class table
  if (d.adan) {
    n += d.D * 3 * d.D + 3 * d.D + 2 * 2 * d.D;  // trunk, final modulation
  } else {
    n += d.D * d.D + d.D + 2 * d.D;              // condition token projection, final norm
  }
  n += d.D * d.P * 2 * d.C + d.P * 2 * d.C;       // head
  for (SublayerKind k : c.sublayers()) n += sublayer_params(d, k);
  return n;
}

CostBreakdown model_cost(const ModelConfig& c, const LatentShape& shape) {
  c.validate();
  if (shape.channels != c.in_channels || shape.height % c.patch != 0 || shape.width % c.patch != 0 ||
      shape.frames == 0) {
    throw DimensionError("model_cost: latent " + std::to_string(shape.frames) + "x" + std::to_string(shape.height) +
                         "x" + std::to_string(shape.width) + "x" + std::to_string(shape.channels) +
                         " does not fit the config");
  }
  const Dims d = dims(c);
  const Count F = shape.frames, S = (shape.height / c.patch) * (shape.width / c.patch), tokens = F * S;
  const Count prefix = d.adan ? 0 : 1;

  CostBreakdown out;
  const auto push = [&](std::string name, Count flops, Count params) {
    out.entries.push_back({std::move(name), flops, params});
    out.total_flops += flops;
    out.total_params += params;
  };
  push("patch_embed", tokens * d.P * d.C * d.D, d.P * d.C * d.D + d.D);
  // The modulation trunk runs once for the blocks and once for the final layer.
  const Count cond_flops = 2 * d.D * d.D + (d.adan ? 2 * d.D * 3 * d.D : d.D * d.D);
  const Count cond_params = 2 * (d.D * d.D + d.D) + d.classes * d.D +
                            (d.adan ? d.D * 3 * d.D + 3 * d.D : d.D * d.D + d.D);
  push("condition", cond_flops, cond_params);

  const auto sub = c.sublayers();
  for (std::size_t i = 0; i < sub.size(); ++i) {
    Count rows = 1, len = tokens;
    switch (sub[i]) {
      case SublayerKind::SpatialMamba:
      case SublayerKind::SpatialAttention: rows = F, len = S; break;
      case SublayerKind::TemporalMamba:
      case SublayerKind::TemporalAttention: rows = S, len = F; break;
      case SublayerKind::GlobalMamba: break;
    }
    push("blocks." + std::to_string(i) + "." + to_string(sub[i]), sublayer_flops(d, sub[i], rows, len + prefix),
         sublayer_params(d, sub[i]));
  }
  push("final", tokens * d.D * d.P * 2 * d.C,
       (d.adan ? 2 * 2 * d.D : 2 * d.D) + d.D * d.P * 2 * d.C + d.P * 2 * d.C);
  return out;
}

}  // namespace matten::analysis
