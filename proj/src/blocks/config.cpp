#include "matten/config.hpp"

#include <set>

#include "matten/error.hpp"

namespace matten {

std::string to_string(SublayerKind kind) {
  switch (kind) {
    case SublayerKind::SpatialMamba: return "spatial_mamba";
    case SublayerKind::TemporalMamba: return "temporal_mamba";
    case SublayerKind::GlobalMamba: return "global_mamba";
    case SublayerKind::SpatialAttention: return "spatial_attention";
    case SublayerKind::TemporalAttention: return "temporal_attention";
  }
  return "?";
}

std::string to_string(Conditioning mode) {
  return mode == Conditioning::MAdaN ? "m_adan" : "conditional_tokens";
}

std::size_t ModelConfig::resolved_heads() const {
  return heads ? heads : std::max<std::size_t>(1, hidden / 64);
}

std::size_t ModelConfig::resolved_dt_rank() const {
  return dt_rank ? dt_rank : (hidden + 15) / 16;
}

std::vector<SublayerKind> ModelConfig::group() const {
  using K = SublayerKind;
  switch (variant) {
    case 1: return {K::GlobalMamba};
    case 2: return {K::SpatialMamba, K::TemporalMamba};
    case 3: return {K::SpatialAttention, K::TemporalAttention, K::GlobalMamba};
    case 4: return {K::TemporalAttention, K::GlobalMamba};
    default: throw ConfigError("variant must be 1, 2, 3 or 4, got " + std::to_string(variant));
  }
}

std::size_t ModelConfig::group_count() const {
  const std::size_t size = group().size();
  if (counting == LayerCounting::Blocks) return layers;
  if (layers % size != 0) {
    throw ConfigError("variant " + std::to_string(variant) + " groups " + std::to_string(size) +
                      " sublayers; L=" + std::to_string(layers) + " is not divisible");
  }
  return layers / size;
}

std::vector<SublayerKind> ModelConfig::sublayers() const {
  const auto g = group();
  std::vector<SublayerKind> out;
  for (std::size_t i = 0, n = group_count(); i < n; ++i) out.insert(out.end(), g.begin(), g.end());
  return out;
}

void ModelConfig::validate() const {
  group();
  if (layers == 0) throw ConfigError("layers must be positive");
  if (group_count() == 0) throw ConfigError("configuration has no sublayers");
  if (hidden == 0 || hidden % 4 != 0) {
    throw ConfigError("hidden size must be a positive multiple of 4, got " + std::to_string(hidden));
  }
  if (state == 0 || expand == 0 || patch == 0 || in_channels == 0 || conv_kernel == 0 ||
      ffn_mult == 0) {
    throw ConfigError("state, expand, patch, in_channels, conv_kernel and ffn_mult must be positive");
  }
  if (timesteps < 2) throw ConfigError("timesteps must be at least 2");
  const std::size_t h = resolved_heads();
  if (hidden % h != 0) {
    throw ConfigError("heads=" + std::to_string(h) + " does not divide hidden=" + std::to_string(hidden));
  }
}

ModelConfig preset(const std::string& name, int variant) {
  ModelConfig c;
  c.variant = variant;
  if (name == "S") {
    c.layers = 12, c.hidden = 384;
  } else if (name == "B") {
    c.layers = 12, c.hidden = 768;
  } else if (name == "L") {
    c.layers = 24, c.hidden = 1024;
  } else if (name == "XL") {
    c.layers = 28, c.hidden = 1152;
  } else {
    throw ConfigError("unknown preset '" + name + "' (expected S, B, L or XL)");
  }
  return c;
}

namespace {

template <typename E>
E parse_enum(const nlohmann::json& j, const char* key,
             std::initializer_list<std::pair<const char*, E>> names) {
  const auto text = j.get<std::string>();
  for (const auto& [n, v] : names)
    if (text == n) return v;
  throw ConfigError(std::string("model.") + key + ": unknown value '" + text + "'");
}

}  // namespace

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"variant", c.variant},
                     {"layers", c.layers},
                     {"hidden", c.hidden},
                     {"state", c.state},
                     {"expand", c.expand},
                     {"patch", c.patch},
                     {"heads", c.heads},
                     {"in_channels", c.in_channels},
                     {"num_classes", c.num_classes},
                     {"conv_kernel", c.conv_kernel},
                     {"dt_rank", c.dt_rank},
                     {"ffn_mult", c.ffn_mult},
                     {"timesteps", c.timesteps},
                     {"attention_bias", c.attention_bias},
                     {"conditioning", to_string(c.conditioning)},
                     {"gate", c.gate == GatePlacement::Printed ? "printed" : "dit"},
                     {"layer_counting", c.counting == LayerCounting::Blocks ? "blocks" : "sublayers"},
                     {"dtype", to_string(c.dtype)}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  if (!j.is_object()) throw ConfigError("model: expected an object");
  static const std::set<std::string> known{
      "variant", "layers",    "hidden",    "state",         "expand",         "patch",
      "heads",   "in_channels", "num_classes", "conv_kernel", "dt_rank",     "ffn_mult",
      "timesteps", "attention_bias", "conditioning", "gate", "layer_counting", "dtype"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("model: unknown key '" + key + "'");
  }
  try {
    const auto get = [&](const char* key, auto& field) {
      if (!j.contains(key)) return;
      try {
        j.at(key).get_to(field);
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model.") + key + ": " + e.what());
      }
    };
    get("variant", c.variant);
    get("layers", c.layers);
    get("hidden", c.hidden);
    get("state", c.state);
    get("expand", c.expand);
    get("patch", c.patch);
    get("heads", c.heads);
    get("in_channels", c.in_channels);
    get("num_classes", c.num_classes);
    get("conv_kernel", c.conv_kernel);
    get("dt_rank", c.dt_rank);
    get("ffn_mult", c.ffn_mult);
    get("timesteps", c.timesteps);
    get("attention_bias", c.attention_bias);
    if (j.contains("conditioning")) {
      c.conditioning = parse_enum<Conditioning>(
          j["conditioning"], "conditioning",
          {{"m_adan", Conditioning::MAdaN}, {"conditional_tokens", Conditioning::ConditionalTokens}});
    }
    if (j.contains("gate")) {
      c.gate = parse_enum<GatePlacement>(j["gate"], "gate",
                                         {{"printed", GatePlacement::Printed}, {"dit", GatePlacement::DiT}});
    }
    if (j.contains("layer_counting")) {
      c.counting = parse_enum<LayerCounting>(
          j["layer_counting"], "layer_counting",
          {{"blocks", LayerCounting::Blocks}, {"sublayers", LayerCounting::Sublayers}});
    }
    if (j.contains("dtype")) {
      c.dtype = parse_enum<DType>(j["dtype"], "dtype", {{"f32", DType::F32}, {"f64", DType::F64}});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
}

}  // namespace matten
