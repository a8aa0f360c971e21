#include "matten/model.hpp"

#include <cmath>
#include <random>

#include "matten/error.hpp"
#include "matten/init.hpp"
#include "matten/ops.hpp"

namespace matten {

Layout layout_for(SublayerKind kind) {
  switch (kind) {
    case SublayerKind::SpatialMamba:
    case SublayerKind::SpatialAttention: return Layout::Spatial;
    case SublayerKind::TemporalMamba:
    case SublayerKind::TemporalAttention: return Layout::Temporal;
    case SublayerKind::GlobalMamba: return Layout::Full;
  }
  return Layout::Full;
}

Tensor per_row(const Tensor& t, std::size_t rows, std::size_t len) {
  const std::size_t B = t.extent(0), D = t.extent(1);
  if (rows % B != 0) {
    throw DimensionError("per_row: " + std::to_string(rows) + " rows for " + std::to_string(B) + " videos");
  }
  return reshape(expand_axis(t, 1, rows / B * len), {rows, len, D});
}

std::pair<Tensor, Tensor> m_adan(const Tensor& f, const Tensor& gamma, const Tensor& beta,
                                 const Tensor& alpha) {
  const std::size_t R = f.extent(0), J = f.extent(1);
  const Tensor normed = layer_norm(f);
  return {add(mul(normed, per_row(gamma, R, J)), per_row(beta, R, J)), alpha};
}

TokenSequence prepend_condition(const TokenSequence& tokens, const Tensor& cond) {
  if (tokens.prefix != 0) throw LayoutError("prepend_condition: sequence already has a prefix");
  const std::size_t R = tokens.row_count();
  const Tensor rows = per_row(cond, R, 1);
  const std::vector<Tensor> parts{rows, tokens.data};
  return make_tokens(concat(parts, 1), tokens.layout, tokens.grid, 1);
}

std::pair<TokenSequence, Tensor> strip_condition(const TokenSequence& tokens) {
  if (tokens.prefix != 1) throw LayoutError("strip_condition: no conditional token present");
  const std::size_t R = tokens.row_count(), J = tokens.row_length(), D = tokens.grid.dim;
  const std::size_t B = tokens.grid.batch, per_video = R / B;
  TokenSequence plain = make_tokens(slice(tokens.data, 1, 1, J), tokens.layout, tokens.grid, 0);
  const Tensor heads = reshape(slice(tokens.data, 1, 0, 1), {B, per_video, D});
  Tensor cond = scale(sum_axis(heads, 1), 1.0 / static_cast<double>(per_video));
  return {std::move(plain), std::move(cond)};
}

namespace {

Modulation make_modulation(std::size_t width, DType dtype) {
  return {parameter({width}, 1.0, dtype), parameter({width}, 0.0, dtype)};
}

// Softplus^-1 of dt drawn log-uniformly from [1e-3, 1e-1].
Tensor delta_bias_init(std::size_t n, std::mt19937_64& rng, DType dtype) {
  std::uniform_real_distribution<double> u(std::log(1e-3), std::log(1e-1));
  std::vector<double> v(n);
  for (auto& b : v) {
    const double dt = std::exp(u(rng));
    b = dt + std::log(-std::expm1(-dt));
  }
  return Tensor::from_vector({n}, std::move(v), dtype).set_requires_grad();
}

ssm::ScanDirection make_direction(const ModelConfig& c, std::mt19937_64& rng) {
  const std::size_t Di = c.inner(), N = c.state, R = c.resolved_dt_rank(), K = c.conv_kernel;
  const double bound = 1.0 / std::sqrt(static_cast<double>(K));
  std::vector<double> alog(Di * N);
  for (std::size_t d = 0; d < Di; ++d)
    for (std::size_t n = 0; n < N; ++n) alog[d * N + n] = std::log(static_cast<double>(n + 1));
  ssm::ScanDirection dir;
  dir.conv_w = uniform({Di, K}, -bound, bound, rng, c.dtype);
  dir.conv_b = uniform({Di}, -bound, bound, rng, c.dtype);
  dir.ssm.a_log = Tensor::from_vector({Di, N}, std::move(alog), c.dtype).set_requires_grad();
  dir.ssm.d_skip = parameter({Di}, 1.0, c.dtype);
  dir.ssm.proj_bc = xavier_uniform(Di, 2 * N, rng, c.dtype);
  dir.ssm.proj_delta_in = xavier_uniform(Di, R, rng, c.dtype);
  dir.ssm.proj_delta_out = xavier_uniform(R, Di, rng, c.dtype);
  dir.ssm.delta_bias = delta_bias_init(Di, rng, c.dtype);
  return dir;
}

void zero(Tensor& t) {
  if (t.defined()) t.assign(std::vector<double>(t.numel(), 0.0));
}

Tensor sincos_rows(std::span<const std::size_t> positions, std::size_t dim, DType dtype) {
  std::vector<double> v;
  v.reserve(positions.size() * dim);
  for (auto p : positions) {
    const auto f = sincos_features(static_cast<double>(p), dim);
    v.insert(v.end(), f.begin(), f.end());
  }
  return Tensor::from_vector({positions.size(), dim}, std::move(v), dtype);
}

void add_named(std::vector<NamedTensor>& out, const std::string& name, const Tensor& t) {
  if (t.defined()) out.push_back({name, t});
}

void add_modulation(std::vector<NamedTensor>& out, const std::string& name, const Modulation& m) {
  add_named(out, name + ".mix", m.mix);
  add_named(out, name + ".offset", m.offset);
}

void add_direction(std::vector<NamedTensor>& out, const std::string& name,
                   const ssm::ScanDirection& d) {
  add_named(out, name + ".conv_w", d.conv_w);
  add_named(out, name + ".conv_b", d.conv_b);
  add_named(out, name + ".a_log", d.ssm.a_log);
  add_named(out, name + ".d_skip", d.ssm.d_skip);
  add_named(out, name + ".proj_bc", d.ssm.proj_bc);
  add_named(out, name + ".delta_in", d.ssm.proj_delta_in);
  add_named(out, name + ".delta_out", d.ssm.proj_delta_out);
  add_named(out, name + ".delta_bias", d.ssm.delta_bias);
}

bool is_mamba(SublayerKind k) {
  return k == SublayerKind::SpatialMamba || k == SublayerKind::TemporalMamba ||
         k == SublayerKind::GlobalMamba;
}

}  // namespace

MattenModel::MattenModel(ModelConfig config, std::uint64_t seed, InitMode mode)
    : config_(std::move(config)) {
  config_.validate();
  const ModelConfig& c = config_;
  const DType dt = c.dtype;
  const std::size_t D = c.hidden, Di = c.inner(), P = c.patch * c.patch;
  const bool adan = c.conditioning == Conditioning::MAdaN;
  std::mt19937_64 rng(seed);

  patch_w_ = xavier_uniform(P * c.in_channels, D, rng, dt);
  patch_b_ = parameter({D}, 0.0, dt);
  time_w1_ = xavier_uniform(D, D, rng, dt);
  time_b1_ = parameter({D}, 0.0, dt);
  time_w2_ = xavier_uniform(D, D, rng, dt);
  time_b2_ = parameter({D}, 0.0, dt);
  if (c.num_classes > 0) {
    class_table_ = Tensor::randn({c.num_classes, D}, rng, 0.02, dt).set_requires_grad();
  }
  if (adan) {
    mod_w_ = parameter({D, 3 * D}, 0.0, dt);
    mod_b_ = parameter({3 * D}, 0.0, dt);
    final_mod_ = make_modulation(2 * D, dt);
  } else {
    cond_w_ = xavier_uniform(D, D, rng, dt);
    cond_b_ = parameter({D}, 0.0, dt);
    final_gain_ = parameter({D}, 1.0, dt);
    final_bias_ = parameter({D}, 0.0, dt);
  }
  head_w_ = parameter({D, P * 2 * c.in_channels}, 0.0, dt);
  head_b_ = parameter({P * 2 * c.in_channels}, 0.0, dt);

  for (SublayerKind kind : c.sublayers()) {
    Sublayer sub{kind, {}, {}};
    if (is_mamba(kind)) {
      MambaBlock& m = sub.mamba;
      m.in_proj = xavier_uniform(D, 2 * Di, rng, dt);
      m.fwd = make_direction(c, rng);
      m.bwd = make_direction(c, rng);
      m.out_proj = xavier_uniform(Di, D, rng, dt);
      if (adan) {
        m.mod = make_modulation(3 * D, dt);
      } else {
        m.norm_gain = parameter({D}, 1.0, dt);
        m.norm_bias = parameter({D}, 0.0, dt);
      }
      if (mode == InitMode::Identity) zero(m.out_proj);
    } else {
      AttentionBlock& a = sub.attn;
      const std::size_t hidden = c.ffn_mult * D;
      a.attn = attention::init_attention(D, c.resolved_heads(), c.attention_bias, rng, dt);
      a.ffn_w1 = xavier_uniform(D, hidden, rng, dt);
      a.ffn_b1 = parameter({hidden}, 0.0, dt);
      a.ffn_w2 = xavier_uniform(hidden, D, rng, dt);
      a.ffn_b2 = parameter({D}, 0.0, dt);
      if (adan) {
        a.mod_attn = make_modulation(3 * D, dt);
        a.mod_ffn = make_modulation(3 * D, dt);
      } else {
        a.norm1_gain = parameter({D}, 1.0, dt);
        a.norm1_bias = parameter({D}, 0.0, dt);
        a.norm2_gain = parameter({D}, 1.0, dt);
        a.norm2_bias = parameter({D}, 0.0, dt);
      }
      if (mode == InitMode::Identity) {
        zero(a.attn.w_o);
        zero(a.attn.b_o);
        zero(a.ffn_w2);
        zero(a.ffn_b2);
      }
    }
    sublayers_.push_back(std::move(sub));
  }
}

std::vector<NamedTensor> MattenModel::parameters() const {
  std::vector<NamedTensor> out;
  add_named(out, "patch.w", patch_w_);
  add_named(out, "patch.b", patch_b_);
  add_named(out, "time.w1", time_w1_);
  add_named(out, "time.b1", time_b1_);
  add_named(out, "time.w2", time_w2_);
  add_named(out, "time.b2", time_b2_);
  add_named(out, "class_table", class_table_);
  add_named(out, "mod.w", mod_w_);
  add_named(out, "mod.b", mod_b_);
  add_named(out, "cond.w", cond_w_);
  add_named(out, "cond.b", cond_b_);
  for (std::size_t i = 0; i < sublayers_.size(); ++i) {
    const Sublayer& s = sublayers_[i];
    const std::string p = "blocks." + std::to_string(i) + "." + to_string(s.kind);
    if (is_mamba(s.kind)) {
      const MambaBlock& m = s.mamba;
      add_named(out, p + ".in_proj", m.in_proj);
      add_direction(out, p + ".fwd", m.fwd);
      add_direction(out, p + ".bwd", m.bwd);
      add_named(out, p + ".out_proj", m.out_proj);
      add_modulation(out, p + ".mod", m.mod);
      add_named(out, p + ".norm.gain", m.norm_gain);
      add_named(out, p + ".norm.bias", m.norm_bias);
    } else {
      const AttentionBlock& a = s.attn;
      add_named(out, p + ".w_q", a.attn.w_q);
      add_named(out, p + ".w_k", a.attn.w_k);
      add_named(out, p + ".w_v", a.attn.w_v);
      add_named(out, p + ".w_o", a.attn.w_o);
      add_named(out, p + ".b_q", a.attn.b_q);
      add_named(out, p + ".b_v", a.attn.b_v);
      add_named(out, p + ".b_o", a.attn.b_o);
      add_named(out, p + ".ffn.w1", a.ffn_w1);
      add_named(out, p + ".ffn.b1", a.ffn_b1);
      add_named(out, p + ".ffn.w2", a.ffn_w2);
      add_named(out, p + ".ffn.b2", a.ffn_b2);
      add_modulation(out, p + ".mod_attn", a.mod_attn);
      add_modulation(out, p + ".mod_ffn", a.mod_ffn);
      add_named(out, p + ".norm1.gain", a.norm1_gain);
      add_named(out, p + ".norm1.bias", a.norm1_bias);
      add_named(out, p + ".norm2.gain", a.norm2_gain);
      add_named(out, p + ".norm2.bias", a.norm2_bias);
    }
  }
  add_modulation(out, "final.mod", final_mod_);
  add_named(out, "final.gain", final_gain_);
  add_named(out, "final.bias", final_bias_);
  add_named(out, "head.w", head_w_);
  add_named(out, "head.b", head_b_);
  return out;
}

std::size_t MattenModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

Tensor MattenModel::embed_condition(std::span<const std::size_t> timesteps,
                                    std::span<const std::size_t> classes) const {
  const ModelConfig& c = config_;
  if (timesteps.empty()) throw DimensionError("embed_condition: no timesteps");
  for (auto t : timesteps) {
    if (t >= c.timesteps) {
      throw IndexError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(c.timesteps) + ")");
    }
  }
  const Tensor features = sincos_rows(timesteps, c.hidden, c.dtype);
  Tensor emb = linear(silu(linear(features, time_w1_, time_b1_)), time_w2_, time_b2_);
  if (!classes.empty()) {
    if (classes.size() != timesteps.size()) {
      throw DimensionError("embed_condition: " + std::to_string(classes.size()) + " classes for " +
                           std::to_string(timesteps.size()) + " timesteps");
    }
    if (!class_table_.defined()) throw IndexError("model has no class embedding (num_classes = 0)");
    std::vector<Tensor> rows;
    for (auto k : classes) {
      if (k >= c.num_classes) {
        throw IndexError("class id " + std::to_string(k) + " outside [0, " + std::to_string(c.num_classes) + ")");
      }
      rows.push_back(reshape(take_row(class_table_, k), {1, c.hidden}));
    }
    emb = add(emb, concat(rows, 0));
  }
  return emb;
}

TokenSequence MattenModel::patchify_and_embed(const Tensor& latent) const {
  const ModelConfig& c = config_;
  if (latent.rank() != 5 || latent.extent(4) != c.in_channels) {
    throw DimensionError("model input must be [B, F, H, W, " + std::to_string(c.in_channels) +
                         "], got " + to_string(latent.shape()));
  }
  const std::size_t B = latent.extent(0), F = latent.extent(1);
  const Tensor patches = patchify(latent, c.patch);
  const TokenGrid grid{B, F, latent.extent(2) / c.patch, latent.extent(3) / c.patch, c.hidden};
  const Tensor pos = spatiotemporal_pos_embed(F, grid.rows, grid.cols, c.hidden, c.dtype);
  const Tensor z = add(linear(patches, patch_w_, patch_b_), pos);
  return make_tokens(reshape(z, {B, grid.per_video(), c.hidden}), Layout::Full, grid);
}

Tensor MattenModel::trunk(const Tensor& c) const {
  return linear(silu(c), mod_w_, mod_b_);
}

namespace {

struct Site {
  Tensor gamma, beta, alpha;  // raw, [B, D]
};

Site read_site(const Tensor& trunk, const Modulation& m, std::size_t D) {
  const Tensor t = add(mul(trunk, m.mix), m.offset);
  return {slice(t, 1, 0, D), slice(t, 1, D, 2 * D), slice(t, 1, 2 * D, 3 * D)};
}

}  // namespace

TokenSequence MattenModel::run_sublayer(const Sublayer& sub, const TokenSequence& tokens,
                                        const Tensor& trunk_out) const {
  const ModelConfig& c = config_;
  const std::size_t D = c.hidden, Di = c.inner();
  const bool adan = trunk_out.defined();
  const Tensor& f0 = tokens.data;
  const std::size_t R = f0.extent(0), J = f0.extent(1);

  // Applies the pre-norm sublayer `body` with the configured residual form.
  const auto residual = [&](const Tensor& f, const Modulation& mod, const Tensor& gain,
                            const Tensor& bias, const auto& body) {
    if (!adan) return add(f, body(layer_norm(f, gain, bias)));
    const Site s = read_site(trunk_out, mod, D);
    const Tensor normed = m_adan(f, add_scalar(s.gamma, 1.0), s.beta).first;
    const Tensor out = body(normed);
    if (c.gate == GatePlacement::DiT) return add(f, mul(out, per_row(s.alpha, R, J)));
    return add(mul(f, per_row(add_scalar(s.alpha, 1.0), R, J)), out);
  };

  TokenSequence result = tokens;
  if (layout_for(sub.kind) != tokens.layout) {
    throw LayoutError(to_string(sub.kind) + " needs " + to_string(layout_for(sub.kind)) +
                      " layout, got " + to_string(tokens.layout));
  }
  if (sub.kind == SublayerKind::SpatialMamba || sub.kind == SublayerKind::TemporalMamba ||
      sub.kind == SublayerKind::GlobalMamba) {
    const MambaBlock& m = sub.mamba;
    result.data = residual(f0, m.mod, m.norm_gain, m.norm_bias, [&](const Tensor& h) {
      const Tensor xz = linear(h, m.in_proj);
      const Tensor x = slice(xz, 2, 0, Di);
      const Tensor gate = silu(slice(xz, 2, Di, 2 * Di));
      return linear(mul(ssm::bidirectional_scan(m.fwd, m.bwd, x), gate), m.out_proj);
    });
    return result;
  }

  const AttentionBlock& a = sub.attn;
  const Tensor h1 = residual(f0, a.mod_attn, a.norm1_gain, a.norm1_bias, [&](const Tensor& h) {
    TokenSequence view = tokens;
    view.data = h;
    return sub.kind == SublayerKind::SpatialAttention ? attention::spatial_attention(a.attn, view).data
                                                      : attention::temporal_attention(a.attn, view).data;
  });
  result.data = residual(h1, a.mod_ffn, a.norm2_gain, a.norm2_bias, [&](const Tensor& h) {
    return linear(silu(linear(h, a.ffn_w1, a.ffn_b1)), a.ffn_w2, a.ffn_b2);
  });
  return result;
}

TokenSequence MattenModel::variant_forward(const TokenSequence& tokens, const Tensor& c) const {
  if (tokens.prefix != 0) throw LayoutError("variant_forward: expects tokens without a prefix");
  if (c.rank() != 2 || c.extent(0) != tokens.grid.batch || c.extent(1) != config_.hidden) {
    throw DimensionError("variant_forward: condition must be [B, D], got " + to_string(c.shape()));
  }
  const bool adan = config_.conditioning == Conditioning::MAdaN;
  const Tensor trunk_out = adan ? trunk(c) : Tensor{};
  Tensor cond = adan ? Tensor{} : linear(c, cond_w_, cond_b_);
  TokenSequence x = tokens;
  for (const Sublayer& sub : sublayers_) {
    x = relayout(x, layout_for(sub.kind));
    if (adan) {
      x = run_sublayer(sub, x, trunk_out);
    } else {
      auto [plain, next] = strip_condition(run_sublayer(sub, prepend_condition(x, cond), {}));
      x = std::move(plain);
      cond = std::move(next);
    }
  }
  return relayout(x, Layout::Full);
}

ModelOutput MattenModel::unpatchify_final(const TokenSequence& tokens, const Tensor& c) const {
  const ModelConfig& cfg = config_;
  const TokenSequence full = relayout(tokens, Layout::Full);
  const TokenGrid& g = full.grid;
  const std::size_t D = cfg.hidden;
  Tensor h;
  if (cfg.conditioning == Conditioning::MAdaN) {
    const Tensor t = add(mul(slice(trunk(c), 1, 0, 2 * D), final_mod_.mix), final_mod_.offset);
    h = m_adan(full.data, add_scalar(slice(t, 1, 0, D), 1.0), slice(t, 1, D, 2 * D)).first;
  } else {
    h = layer_norm(full.data, final_gain_, final_bias_);
  }
  const std::size_t width = cfg.patch * cfg.patch * 2 * cfg.in_channels;
  const Tensor patches = reshape(linear(h, head_w_, head_b_), {g.batch, g.frames, g.spatial(), width});
  const Tensor video = unpatchify(patches, g.rows, g.cols, cfg.patch);
  const std::size_t C = cfg.in_channels;
  return {slice(video, 4, 0, C), slice(video, 4, C, 2 * C)};
}

ModelOutput MattenModel::forward(const Tensor& latent, std::span<const std::size_t> timesteps,
                                 std::span<const std::size_t> classes) const {
  if (latent.rank() != 5 || latent.extent(0) != timesteps.size()) {
    throw DimensionError("forward: latent " + to_string(latent.shape()) + " with " +
                         std::to_string(timesteps.size()) + " timesteps");
  }
  const Tensor c = embed_condition(timesteps, classes);
  return unpatchify_final(variant_forward(patchify_and_embed(latent), c), c);
}

}  // namespace matten
