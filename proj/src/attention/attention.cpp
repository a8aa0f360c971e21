#include "matten/attention.hpp"

#include <algorithm>
#include <cmath>

#include "matten/error.hpp"
#include "matten/init.hpp"
#include "matten/ops.hpp"

namespace matten::attention {

std::size_t default_heads(std::size_t dim) { return std::max<std::size_t>(1, dim / 64); }

AttentionParams init_attention(std::size_t dim, std::size_t heads, bool with_bias,
                               std::mt19937_64& rng, DType dtype) {
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("attention: " + std::to_string(heads) + " heads do not divide D=" +
                      std::to_string(dim));
  }
  AttentionParams p;
  p.heads = heads;
  p.w_q = xavier_uniform(dim, dim, rng, dtype);
  p.w_k = xavier_uniform(dim, dim, rng, dtype);
  p.w_v = xavier_uniform(dim, dim, rng, dtype);
  p.w_o = xavier_uniform(dim, dim, rng, dtype);
  if (with_bias) {
    p.b_q = parameter({dim}, 0.0, dtype);
    p.b_v = parameter({dim}, 0.0, dtype);
    p.b_o = parameter({dim}, 0.0, dtype);
  }
  return p;
}

namespace {

// [B, J, D] -> [B * H, J, hd]
Tensor split_heads(const Tensor& t, std::size_t B, std::size_t J, std::size_t H,
                   std::size_t hd) {
  if (H == 1) return t;
  return reshape(permute(reshape(t, {B, J, H, hd}), {0, 2, 1, 3}), {B * H, J, hd});
}

Tensor merge_heads(const Tensor& t, std::size_t B, std::size_t J, std::size_t H,
                   std::size_t hd) {
  if (H == 1) return t;
  return reshape(permute(reshape(t, {B, H, J, hd}), {0, 2, 1, 3}), {B, J, H * hd});
}

}  // namespace

Tensor multi_head_attention(const AttentionParams& p, const Tensor& x) {
  if (x.rank() != 3 || x.extent(2) != p.dim()) {
    throw DimensionError("attention: expected [B, J, " + std::to_string(p.dim()) + "], got " +
                         to_string(x.shape()));
  }
  if (p.heads == 0 || p.dim() % p.heads != 0) {
    throw ConfigError("attention: heads must divide D");
  }
  const std::size_t B = x.extent(0), J = x.extent(1), H = p.heads, hd = p.head_dim();
  const Tensor q = split_heads(linear(x, p.w_q, p.b_q), B, J, H, hd);
  const Tensor k = split_heads(linear(x, p.w_k), B, J, H, hd);
  const Tensor v = split_heads(linear(x, p.w_v, p.b_v), B, J, H, hd);
  const Tensor scores = bmm(scale(q, 1.0 / std::sqrt(static_cast<double>(hd))),
                            permute(k, {0, 2, 1}));
  const Tensor mixed = bmm(softmax(scores), v);
  return linear(merge_heads(mixed, B, J, H, hd), p.w_o, p.b_o);
}

namespace {

TokenSequence apply(const AttentionParams& p, const TokenSequence& tokens, Layout need,
                    const char* what) {
  if (tokens.layout != need) {
    throw LayoutError(std::string(what) + ": needs " + to_string(need) + " layout, got " +
                      to_string(tokens.layout));
  }
  TokenSequence out = tokens;
  out.data = multi_head_attention(p, tokens.data);
  return out;
}

}  // namespace

TokenSequence spatial_attention(const AttentionParams& p, const TokenSequence& tokens) {
  return apply(p, tokens, Layout::Spatial, "spatial_attention");
}

TokenSequence temporal_attention(const AttentionParams& p, const TokenSequence& tokens) {
  return apply(p, tokens, Layout::Temporal, "temporal_attention");
}

TokenSequence global_attention_oracle(const AttentionParams& p, const TokenSequence& tokens,
                                      std::size_t limit) {
  if (tokens.layout == Layout::Full && tokens.row_length() > limit) {
    throw SizeError("global attention over " + std::to_string(tokens.row_length()) +
                    " tokens exceeds the " + std::to_string(limit) + "-token guard");
  }
  return apply(p, tokens, Layout::Full, "global_attention_oracle");
}

std::uint64_t attention_mac_count(std::size_t length, std::size_t dim) {
  const std::uint64_t J = length, D = dim;
  return 2 * J * J * D + 4 * J * D * D;
}

}  // namespace matten::attention
