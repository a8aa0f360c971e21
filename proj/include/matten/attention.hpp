#pragma once

#include <cstdint>
#include <random>

#include "matten/tensor.hpp"
#include "matten/tokens.hpp"

namespace matten::attention {

/// Largest sequence the global (space-time) oracle accepts.
inline constexpr std::size_t kGlobalTokenLimit = 4096;

struct AttentionParams {
  Tensor w_q, w_k, w_v, w_o;  // [D, D], applied as x * W
  // [D] or undefined. There is no key bias: softmax over keys is invariant
  // to it, so its gradient is identically zero.
  Tensor b_q, b_v, b_o;
  std::size_t heads = 1;

  std::size_t dim() const { return w_q.extent(0); }
  std::size_t head_dim() const { return dim() / heads; }
};

/// D / 64, at least 1.
std::size_t default_heads(std::size_t dim);

/// Xavier-uniform projections; biases (when requested) start at zero.
AttentionParams init_attention(std::size_t dim, std::size_t heads, bool with_bias,
                               std::mt19937_64& rng, DType dtype = DType::F32);

/// x[B, J, D] -> [B, J, D]; per head softmax(Q K^T / sqrt(head_dim)) V,
/// heads concatenated then output-projected. No mask.
Tensor multi_head_attention(const AttentionParams& params, const Tensor& x);

/// Within each frame. Requires the spatial layout.
TokenSequence spatial_attention(const AttentionParams& params, const TokenSequence& tokens);

/// Across frames at each spatial position. Requires the temporal layout.
TokenSequence temporal_attention(const AttentionParams& params, const TokenSequence& tokens);

/// One attention over the whole space-time sequence (full layout), refused
/// above `limit` tokens per row.
TokenSequence global_attention_oracle(const AttentionParams& params,
                                      const TokenSequence& tokens,
                                      std::size_t limit = kGlobalTokenLimit);

/// Multiply-accumulates of one attention over J tokens: 2 J^2 D for the
/// score and value products plus 4 J D^2 for the projections.
std::uint64_t attention_mac_count(std::size_t length, std::size_t dim);

}  // namespace matten::attention
