#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "matten/attention.hpp"
#include "matten/config.hpp"
#include "matten/ssm.hpp"
#include "matten/tokens.hpp"

namespace matten {

/// Standard: DiT-style init (modulation trunk and output head zero).
/// Identity: additionally zeroes every sublayer's output projection, so the
/// whole stack maps tokens to themselves.
enum class InitMode { Standard, Identity };

/// Per-site modulation read off the shared trunk: trunk * mix + offset.
struct Modulation {
  Tensor mix;     // [k * D], starts at 1
  Tensor offset;  // [k * D], starts at 0
};

struct MambaBlock {
  Tensor in_proj;   // [D, 2 * D_inner]: scan input and gate branch
  ssm::ScanDirection fwd, bwd;
  Tensor out_proj;  // [D_inner, D]
  Modulation mod;   // m_adan: (gamma, beta, alpha), 3D
  Tensor norm_gain, norm_bias;  // conditional tokens: plain LayerNorm
};

struct AttentionBlock {
  attention::AttentionParams attn;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Modulation mod_attn, mod_ffn;
  Tensor norm1_gain, norm1_bias, norm2_gain, norm2_bias;
};

struct Sublayer {
  SublayerKind kind;
  MambaBlock mamba;      // Mamba kinds
  AttentionBlock attn;   // attention kinds
};

struct ModelOutput {
  Tensor eps_hat;    // [B, F, H, W, C]
  Tensor sigma_raw;  // [B, F, H, W, C]
};

/// M-AdaN core: gamma * LayerNorm(f) + beta with per-video gamma, beta [B, D]
/// broadcast over every row of f [B * k, J, D]. Returns the modulated tensor
/// and alpha (passed through) for the residual gate.
std::pair<Tensor, Tensor> m_adan(const Tensor& f, const Tensor& gamma, const Tensor& beta,
                                 const Tensor& alpha = {});

/// Repeats per-video rows t[B, D] to [rows, len, D]; rows must be a multiple
/// of B with each video's rows contiguous.
Tensor per_row(const Tensor& t, std::size_t rows, std::size_t len);

/// Prepends cond[B, D] as one extra token to every row.
TokenSequence prepend_condition(const TokenSequence& tokens, const Tensor& cond);

/// Removes the prefix token. Returns the plain sequence and the updated
/// condition: the prefix outputs averaged over each video's rows, [B, D].
std::pair<TokenSequence, Tensor> strip_condition(const TokenSequence& tokens);

/// Layout a sublayer kind runs in.
Layout layout_for(SublayerKind kind);

class MattenModel {
 public:
  MattenModel(ModelConfig config, std::uint64_t seed, InitMode mode = InitMode::Standard);

  const ModelConfig& config() const { return config_; }

  /// Every trainable tensor with a stable hierarchical name, in a fixed order.
  std::vector<NamedTensor> parameters() const;
  std::size_t parameter_count() const;

  /// Sinusoidal timestep features through Linear-SiLU-Linear, plus the class
  /// row when `classes` is non-empty. Returns c[B, D].
  Tensor embed_condition(std::span<const std::size_t> timesteps,
                         std::span<const std::size_t> classes = {}) const;

  /// latent[B, F, H, W, C] -> full-layout tokens, patch projection plus the
  /// fixed space-time positional embedding.
  TokenSequence patchify_and_embed(const Tensor& latent) const;

  /// All sublayers of the variant; returns full layout.
  TokenSequence variant_forward(const TokenSequence& tokens, const Tensor& c) const;

  /// Final modulated norm, projection to p*p*2C per token, reassembly and
  /// split into the noise prediction and raw covariance logits.
  ModelOutput unpatchify_final(const TokenSequence& tokens, const Tensor& c) const;

  ModelOutput forward(const Tensor& latent, std::span<const std::size_t> timesteps,
                      std::span<const std::size_t> classes = {}) const;

  TokenSequence run_sublayer(const Sublayer& sub, const TokenSequence& tokens,
                             const Tensor& trunk) const;

  const std::vector<Sublayer>& sublayers() const { return sublayers_; }

 private:
  Tensor trunk(const Tensor& c) const;

  ModelConfig config_;
  Tensor patch_w_, patch_b_;
  Tensor time_w1_, time_b1_, time_w2_, time_b2_;
  Tensor class_table_;
  Tensor mod_w_, mod_b_;  // shared modulation trunk, m_adan
  Modulation final_mod_;  // m_adan head site, 2D
  Tensor cond_w_, cond_b_;  // conditional tokens projection
  Tensor final_gain_, final_bias_;  // conditional tokens head norm
  Tensor head_w_, head_b_;
  std::vector<Sublayer> sublayers_;
};

}  // namespace matten
