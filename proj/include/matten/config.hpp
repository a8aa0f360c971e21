#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "matten/tensor.hpp"

namespace matten {

enum class Conditioning { MAdaN, ConditionalTokens };

/// Where the M-AdaN residual gate sits. Printed: alpha * f + Sublayer(AdaN(f)).
/// DiT: f + alpha * Sublayer(AdaN(f)).
enum class GatePlacement { Printed, DiT };

/// Whether L counts variant groups (each a full sublayer sequence) or
/// individual sublayers.
enum class LayerCounting { Blocks, Sublayers };

enum class SublayerKind { SpatialMamba, TemporalMamba, GlobalMamba, SpatialAttention, TemporalAttention };

std::string to_string(SublayerKind kind);
std::string to_string(Conditioning mode);

struct ModelConfig {
  int variant = 3;
  std::size_t layers = 12;  // L
  std::size_t hidden = 384;  // D
  std::size_t state = 16;    // N
  std::size_t expand = 2;    // E
  std::size_t patch = 2;
  std::size_t heads = 0;     // 0: D / 64, at least 1
  std::size_t in_channels = 4;
  std::size_t num_classes = 0;
  std::size_t conv_kernel = 4;
  std::size_t dt_rank = 0;   // 0: ceil(D / 16)
  std::size_t ffn_mult = 2;  // attention FFN hidden = ffn_mult * D
  std::size_t timesteps = 1000;
  bool attention_bias = true;
  Conditioning conditioning = Conditioning::MAdaN;
  GatePlacement gate = GatePlacement::Printed;
  LayerCounting counting = LayerCounting::Blocks;
  DType dtype = DType::F32;

  std::size_t resolved_heads() const;
  std::size_t inner() const { return expand * hidden; }
  std::size_t resolved_dt_rank() const;
  /// Sublayer kinds of one variant group.
  std::vector<SublayerKind> group() const;
  std::size_t group_count() const;
  /// Every sublayer in forward order.
  std::vector<SublayerKind> sublayers() const;

  /// Throws ConfigError on any inconsistency.
  void validate() const;
};

/// Table-3 sizes: "S" (L12, D384), "B" (L12, D768), "L" (L24, D1024),
/// "XL" (L28, D1152); N = 16, patch 2.
ModelConfig preset(const std::string& name, int variant = 3);

void to_json(nlohmann::json& j, const ModelConfig& c);
/// Missing keys keep their defaults; unknown keys are a ConfigError.
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace matten
