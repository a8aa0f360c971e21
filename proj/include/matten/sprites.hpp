#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "matten/tensor.hpp"

namespace matten {

enum class SpriteKind { Square, Circle };

/// Procedural videos of one sprite bouncing inside the frame. Video i has
/// class i % kinds.size() and draws kinds[class] over that class's
/// background level.
struct SpriteSpec {
  std::size_t frames = 8, height = 16, width = 16, channels = 1;
  std::size_t num_videos = 64;
  std::size_t sprite_size = 5;
  std::vector<SpriteKind> kinds{SpriteKind::Square, SpriteKind::Circle};
  /// Per-axis speed is drawn from [min_speed, max_speed] pixels per frame
  /// with a random sign.
  double min_speed = 0.75, max_speed = 1.75;
  bool static_sprites = false;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Background of class k: -1 for the first class, rising evenly to -0.2 for
/// the last. Sprites are drawn at +1.
double sprite_background(std::size_t klass, std::size_t classes);

struct SpriteDataset {
  Tensor videos;  // [num_videos, F, H, W, C], F64
  std::vector<std::size_t> labels;
  /// Top-left sprite corner per video and frame, as drawn.
  std::vector<std::pair<int, int>> corners;
};

/// Deterministic in the spec; SpecError when the sprite does not fit.
SpriteDataset gen_sprites(const SpriteSpec& spec);

void to_json(nlohmann::json& j, const SpriteSpec& s);
void from_json(const nlohmann::json& j, SpriteSpec& s);

}  // namespace matten
