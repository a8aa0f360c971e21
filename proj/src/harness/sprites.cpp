#include "matten/sprites.hpp"

#include <cmath>
#include <random>

#include "matten/error.hpp"

namespace matten {

void SpriteSpec::validate() const {
  if (frames == 0 || height == 0 || width == 0 || channels == 0) throw SpecError("sprite video extents must be positive");
  if (sprite_size == 0 || sprite_size > height || sprite_size > width) {
    throw SpecError("sprite of size " + std::to_string(sprite_size) + " does not fit a " + std::to_string(height) + "x" +
                    std::to_string(width) + " frame");
  }
  if (kinds.empty()) throw SpecError("sprite spec needs at least one kind");
  if (!(min_speed >= 0.0 && max_speed >= min_speed)) throw SpecError("sprite speeds must satisfy 0 <= min <= max");
}

double sprite_background(std::size_t klass, std::size_t classes) {
  if (classes <= 1) return -1.0;
  return -1.0 + 0.8 * static_cast<double>(klass) / static_cast<double>(classes - 1);
}

namespace {

// Reflects x into [0, limit], flipping v on each bounce.
void bounce(double& x, double& v, double limit) {
  x += v;
  while (x < 0.0 || x > limit) {
    if (x < 0.0) x = -x;
    if (x > limit) x = 2.0 * limit - x;
    v = -v;
  }
}

}  // namespace

SpriteDataset gen_sprites(const SpriteSpec& spec) {
  spec.validate();
  const std::size_t F = spec.frames, H = spec.height, W = spec.width, C = spec.channels, s = spec.sprite_size;
  const double limit_y = static_cast<double>(H - s), limit_x = static_cast<double>(W - s);
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> speed(spec.min_speed, spec.max_speed);
  std::bernoulli_distribution sign(0.5);

  SpriteDataset out;
  std::vector<double> pixels;
  pixels.reserve(spec.num_videos * F * H * W * C);
  for (std::size_t n = 0; n < spec.num_videos; ++n) {
    const std::size_t klass = n % spec.kinds.size();
    const SpriteKind kind = spec.kinds[klass];
    const double bg = sprite_background(klass, spec.kinds.size());
    double y = unit(rng) * limit_y, x = unit(rng) * limit_x;
    double vy = speed(rng) * (sign(rng) ? 1.0 : -1.0), vx = speed(rng) * (sign(rng) ? 1.0 : -1.0);
    if (spec.static_sprites) vy = vx = 0.0;
    out.labels.push_back(klass);
    for (std::size_t f = 0; f < F; ++f) {
      if (f > 0) {
        bounce(y, vy, limit_y);
        bounce(x, vx, limit_x);
      }
      const int top = static_cast<int>(std::lround(y)), left = static_cast<int>(std::lround(x));
      out.corners.emplace_back(top, left);
      const double r = 0.5 * static_cast<double>(s);
      for (std::size_t i = 0; i < H; ++i) {
        for (std::size_t j = 0; j < W; ++j) {
          const double di = static_cast<double>(i) - top, dj = static_cast<double>(j) - left;
          bool inside = di >= 0 && dj >= 0 && di < static_cast<double>(s) && dj < static_cast<double>(s);
          if (inside && kind == SpriteKind::Circle) {
            const double cy = di + 0.5 - r, cx = dj + 0.5 - r;
            inside = cy * cy + cx * cx <= r * r;
          }
          for (std::size_t c = 0; c < C; ++c) pixels.push_back(inside ? 1.0 : bg);
        }
      }
    }
  }
  out.videos = Tensor::from_vector({spec.num_videos, F, H, W, C}, std::move(pixels), DType::F64);
  return out;
}

NLOHMANN_JSON_SERIALIZE_ENUM(SpriteKind, {{SpriteKind::Square, "square"}, {SpriteKind::Circle, "circle"}})

void to_json(nlohmann::json& j, const SpriteSpec& s) {
  j = {{"frames", s.frames},       {"height", s.height},          {"width", s.width},
       {"channels", s.channels},   {"num_videos", s.num_videos},  {"sprite_size", s.sprite_size},
       {"kinds", s.kinds},         {"min_speed", s.min_speed},    {"max_speed", s.max_speed},
       {"static", s.static_sprites}, {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, SpriteSpec& s) {
  if (!j.is_object()) throw SpecError("data: expected an object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "frames") s.frames = value.get<std::size_t>();
      else if (key == "height") s.height = value.get<std::size_t>();
      else if (key == "width") s.width = value.get<std::size_t>();
      else if (key == "channels") s.channels = value.get<std::size_t>();
      else if (key == "num_videos") s.num_videos = value.get<std::size_t>();
      else if (key == "sprite_size") s.sprite_size = value.get<std::size_t>();
      else if (key == "min_speed") s.min_speed = value.get<double>();
      else if (key == "max_speed") s.max_speed = value.get<double>();
      else if (key == "static") s.static_sprites = value.get<bool>();
      else if (key == "seed") s.seed = value.get<std::uint64_t>();
      else if (key == "kinds") {
        s.kinds.clear();
        for (const auto& k : value) {
          const auto name = k.get<std::string>();
          if (name != "square" && name != "circle") throw SpecError("data.kinds: unknown sprite kind '" + name + "'");
          s.kinds.push_back(k.get<SpriteKind>());
        }
      } else {
        throw SpecError("data: unknown key '" + key + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw SpecError("data." + key + ": " + e.what());
    }
  }
}

}  // namespace matten
