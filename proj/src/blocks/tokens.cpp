#include "matten/tokens.hpp"

#include <cmath>

#include "matten/error.hpp"
#include "matten/ops.hpp"

namespace matten {

std::string to_string(Layout layout) {
  switch (layout) {
    case Layout::Spatial: return "spatial";
    case Layout::Temporal: return "temporal";
    case Layout::Full: return "full";
  }
  return "?";
}

Shape layout_shape(Layout layout, const TokenGrid& g, std::size_t prefix) {
  switch (layout) {
    case Layout::Spatial: return {g.batch * g.frames, prefix + g.spatial(), g.dim};
    case Layout::Temporal: return {g.batch * g.spatial(), prefix + g.frames, g.dim};
    case Layout::Full: return {g.batch, prefix + g.per_video(), g.dim};
  }
  throw LayoutError("unknown layout");
}

std::size_t TokenSequence::row_count() const { return data.extent(0); }
std::size_t TokenSequence::row_length() const { return data.extent(1); }

std::size_t TokenSequence::video_of_row(std::size_t row) const {
  switch (layout) {
    case Layout::Spatial: return row / grid.frames;
    case Layout::Temporal: return row / grid.spatial();
    case Layout::Full: return row;
  }
  return 0;
}

TokenSequence make_tokens(Tensor data, Layout layout, const TokenGrid& grid,
                          std::size_t prefix) {
  const Shape want = layout_shape(layout, grid, prefix);
  if (data.shape() != want) {
    throw LayoutError("tokens: " + to_string(layout) + " layout expects " + to_string(want) +
                      ", got " + to_string(data.shape()));
  }
  return {std::move(data), layout, grid, prefix};
}

std::size_t spatial_first_index(const TokenGrid& g, std::size_t f, std::size_t h,
                                std::size_t w) {
  if (f >= g.frames || h >= g.rows || w >= g.cols) {
    throw IndexError("spatial_first_index: position out of grid");
  }
  return f * g.spatial() + h * g.cols + w;
}

TokenSequence relayout(const TokenSequence& tokens, Layout target) {
  if (tokens.prefix != 0) {
    throw LayoutError("relayout: strip conditional tokens before changing layout");
  }
  const TokenGrid& g = tokens.grid;
  if (tokens.layout == target) return tokens;
  const std::size_t B = g.batch, F = g.frames, S = g.spatial(), d = g.dim;

  Tensor spatial = tokens.data;
  if (tokens.layout == Layout::Full) {
    spatial = reshape(tokens.data, {B * F, S, d});
  } else if (tokens.layout == Layout::Temporal) {
    spatial = reshape(permute(reshape(tokens.data, {B, S, F, d}), {0, 2, 1, 3}), {B * F, S, d});
  }
  switch (target) {
    case Layout::Spatial: return {spatial, target, g, 0};
    case Layout::Full: return {reshape(spatial, {B, F * S, d}), target, g, 0};
    case Layout::Temporal:
      return {reshape(permute(reshape(spatial, {B, F, S, d}), {0, 2, 1, 3}), {B * S, F, d}),
              target, g, 0};
  }
  throw LayoutError("unknown layout");
}

TokenSequence spatial_first_order(const TokenSequence& tokens) {
  return relayout(tokens, Layout::Full);
}

Tensor patchify(const Tensor& video, std::size_t p) {
  if (video.rank() != 5) {
    throw DimensionError("patchify: expected [B, F, H, W, C], got " + to_string(video.shape()));
  }
  const std::size_t B = video.extent(0), F = video.extent(1), H = video.extent(2),
                    W = video.extent(3), C = video.extent(4);
  if (p == 0 || H % p != 0 || W % p != 0) {
    throw DimensionError("patchify: patch " + std::to_string(p) + " does not divide " +
                         std::to_string(H) + "x" + std::to_string(W));
  }
  const std::size_t nh = H / p, nw = W / p;
  const Tensor split = reshape(video, {B, F, nh, p, nw, p, C});
  return reshape(permute(split, {0, 1, 2, 4, 3, 5, 6}), {B, F, nh * nw, p * p * C});
}

Tensor unpatchify(const Tensor& patches, std::size_t rows, std::size_t cols,
                  std::size_t p) {
  if (patches.rank() != 4 || patches.extent(2) != rows * cols || p == 0 ||
      patches.extent(3) % (p * p) != 0) {
    throw DimensionError("unpatchify: cannot split " + to_string(patches.shape()) +
                         " into a " + std::to_string(rows) + "x" + std::to_string(cols) +
                         " grid of patch " + std::to_string(p));
  }
  const std::size_t B = patches.extent(0), F = patches.extent(1),
                    C = patches.extent(3) / (p * p);
  const Tensor split = reshape(patches, {B, F, rows, cols, p, p, C});
  return reshape(permute(split, {0, 1, 2, 4, 3, 5, 6}), {B, F, rows * p, cols * p, C});
}

std::vector<double> sincos_features(double position, std::size_t dim) {
  if (dim % 2 != 0) throw DimensionError("sincos_features: dim must be even");
  const std::size_t half = dim / 2;
  std::vector<double> out(dim);
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half));
    out[i] = std::sin(position * freq);
    out[half + i] = std::cos(position * freq);
  }
  return out;
}

Tensor spatiotemporal_pos_embed(std::size_t frames, std::size_t rows, std::size_t cols,
                                std::size_t dim, DType dtype) {
  if (dim % 4 != 0) {
    throw DimensionError("positional embedding needs dim % 4 == 0, got " + std::to_string(dim));
  }
  std::vector<double> out(frames * rows * cols * dim);
  for (std::size_t f = 0; f < frames; ++f) {
    const auto tf = sincos_features(static_cast<double>(f), dim);
    for (std::size_t h = 0; h < rows; ++h) {
      const auto hf = sincos_features(static_cast<double>(h), dim / 2);
      for (std::size_t w = 0; w < cols; ++w) {
        const auto wf = sincos_features(static_cast<double>(w), dim / 2);
        double* row = out.data() + ((f * rows + h) * cols + w) * dim;
        for (std::size_t i = 0; i < dim / 2; ++i) {
          row[i] = hf[i] + tf[i];
          row[dim / 2 + i] = wf[i] + tf[dim / 2 + i];
        }
      }
    }
  }
  return Tensor::from_vector({frames, rows * cols, dim}, std::move(out), dtype);
}

}  // namespace matten
