#pragma once

#include <cstddef>
#include <string>

#include "matten/tensor.hpp"

// Video token bookkeeping. A batch of B videos patchified to an
// n_f x n_h x n_w grid of d-dimensional tokens is held in one of three
// layouts (s = n_h * n_w):
//
//   spatial   [B * n_f, s, d]     one row per frame
//   temporal  [B * s, n_f, d]     one row per spatial position
//   full      [B, n_f * s, d]     spatial-first raster, frames concatenated
//
// Spatial and full share memory order; temporal is a transpose of the two
// middle axes.
namespace matten {

enum class Layout { Spatial, Temporal, Full };

std::string to_string(Layout layout);

struct TokenGrid {
  std::size_t batch = 1;
  std::size_t frames = 1;  // n_f
  std::size_t rows = 1;    // n_h
  std::size_t cols = 1;    // n_w
  std::size_t dim = 1;     // d

  std::size_t spatial() const { return rows * cols; }
  std::size_t per_video() const { return frames * rows * cols; }
  bool operator==(const TokenGrid&) const = default;
};

struct TokenSequence {
  Tensor data;
  Layout layout = Layout::Full;
  TokenGrid grid;
  /// Conditional tokens prepended to every row (0 or 1).
  std::size_t prefix = 0;

  std::size_t row_count() const;
  std::size_t row_length() const;
  /// Video index owning a row of the current layout.
  std::size_t video_of_row(std::size_t row) const;
};

Shape layout_shape(Layout layout, const TokenGrid& grid, std::size_t prefix = 0);

/// Wraps `data`, checking its extents against the layout.
TokenSequence make_tokens(Tensor data, Layout layout, const TokenGrid& grid,
                          std::size_t prefix = 0);

/// index(f, h, w) = f * n_h * n_w + h * n_w + w
std::size_t spatial_first_index(const TokenGrid& grid, std::size_t f, std::size_t h,
                                std::size_t w);

/// Pure token permutation. Prefixed sequences cannot be relaid out.
TokenSequence relayout(const TokenSequence& tokens, Layout target);

/// relayout(tokens, Full).
TokenSequence spatial_first_order(const TokenSequence& tokens);

/// [B, F, H, W, C] -> [B, F, s, p*p*C]; each token is a p x p patch flattened
/// as (row-in-patch, col-in-patch, channel).
Tensor patchify(const Tensor& video, std::size_t patch);

/// Inverse of patchify: [B, F, s, p*p*C] -> [B, F, H, W, C].
Tensor unpatchify(const Tensor& patches, std::size_t rows, std::size_t cols,
                  std::size_t patch);

/// Fixed sinusoidal embedding [frames, rows * cols, dim]: a 2-D spatial part
/// (half the channels encode the row, half the column) plus a 1-D temporal
/// part over all channels. dim must be a multiple of 4.
Tensor spatiotemporal_pos_embed(std::size_t frames, std::size_t rows, std::size_t cols,
                                std::size_t dim, DType dtype = DType::F32);

/// Sinusoidal features of a scalar position: dim/2 sines then dim/2 cosines
/// with frequencies 10000^(-i/(dim/2)). dim must be even.
std::vector<double> sincos_features(double position, std::size_t dim);

}  // namespace matten
