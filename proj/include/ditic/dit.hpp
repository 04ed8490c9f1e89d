#pragma once

#include <optional>

#include "ditic/layers.hpp"

namespace ditic {

enum class FlowMode { kLiteral, kTScaled };
enum class TFieldMode { kPixelwise, kGlobalMean, kFixed };

struct DitConfig {
  int depth = 4;
  int width = 128;
  int heads = 4;
  int mlp_ratio = 2;
  int cond_dim = 64;

  void validate() const {
    if (width % heads != 0) throw TensorError("dit config: width not divisible by heads");
    if (depth < 1 || width < 2) throw TensorError("dit config: bad dimensions");
  }
};

template <typename S>
struct ConditionEmbedding {
  enum class Source { kLatent, kText, kNull };
  Tensor<S> c;  // [1, d_c], unit norm for latent/text sources
  Source source = Source::kNull;

  static ConditionEmbedding null_condition(int d_c) {
    return ConditionEmbedding{Tensor<S>({1, d_c}), Source::kNull};
  }
};

// Learned pixel-wise variance -> pseudo-timestep map: a 1x1 projection of the
// sigma field squashed through a logistic, so t is strictly increasing in the
// projected value and sits in (0, 1). Weights start positive (1/C) so the map
// is monotone in every sigma channel at init.
template <typename S>
struct VarianceToTime {
  Conv2dLayer<S> proj;
  int channels = 0;

  VarianceToTime() = default;
  VarianceToTime(ParamStore<S>& ps, const std::string& prefix, int channels_, Rng& rng)
      : proj(ps, prefix + ".proj", channels_, 1, 1, 1, rng), channels(channels_) {
    ps.set_value(proj.w, Tensor<S>::full({1, channels}, S(1) / static_cast<S>(channels)));
  }

  // sigma: [C, h, w] -> t: [h, w]. detach_sigma cuts the branch out of the
  // entropy-model gradient graph (ablation probe).
  Tensor<S> forward(ForwardCtx<S>& ctx, const Tensor<S>& sigma, bool detach_sigma) const {
    Tensor<S> s = detach_sigma ? stop_gradient(sigma) : sigma;
    Tensor<S> t = sigmoid(proj.forward(ctx, s));
    return t.reshaped({sigma.dim(1), sigma.dim(2)});
  }
};

// Collapses the field for the ablation arms: spatial mean broadcast back, or
// a fixed constant.
template <typename S>
Tensor<S> apply_tfield_mode(const Tensor<S>& t, TFieldMode mode, double fixed_value) {
  if (mode == TFieldMode::kPixelwise) return t;
  if (mode == TFieldMode::kFixed)
    return Tensor<S>::full(t.shape(), static_cast<S>(fixed_value));
  Tensor<S> ones = Tensor<S>::full(t.shape(), S(1));
  return mul_bcast_scalar(ones, mean(t));
}

template <typename S>
struct DitBlock {
  LayerNormLayer<S> ln1, ln2, ln3;
  Linear<S> wq, wk, wv, wo;
  Linear<S> cq, ck, cv, co;
  Linear<S> mlp1, mlp2;
  int heads = 4;

  DitBlock() = default;
  DitBlock(ParamStore<S>& ps, const std::string& prefix, const DitConfig& cfg, Rng& rng)
      : ln1(ps, prefix + ".ln1", cfg.width),
        ln2(ps, prefix + ".ln2", cfg.width),
        ln3(ps, prefix + ".ln3", cfg.width),
        wq(ps, prefix + ".attn.wq", cfg.width, cfg.width, rng),
        wk(ps, prefix + ".attn.wk", cfg.width, cfg.width, rng),
        wv(ps, prefix + ".attn.wv", cfg.width, cfg.width, rng),
        wo(ps, prefix + ".attn.wo", cfg.width, cfg.width, rng),
        cq(ps, prefix + ".cross.wq", cfg.width, cfg.width, rng),
        ck(ps, prefix + ".cross.wk", cfg.width, cfg.width, rng),
        cv(ps, prefix + ".cross.wv", cfg.width, cfg.width, rng),
        co(ps, prefix + ".cross.wo", cfg.width, cfg.width, rng),
        mlp1(ps, prefix + ".mlp.fc1", cfg.width, cfg.mlp_ratio * cfg.width, rng),
        mlp2(ps, prefix + ".mlp.fc2", cfg.mlp_ratio * cfg.width, cfg.width, rng),
        heads(cfg.heads) {}

  Tensor<S> forward(ForwardCtx<S>& ctx, const Tensor<S>& x,
                    const std::optional<Tensor<S>>& cond_token) const {
    Tensor<S> h = ln1.forward(ctx, x);
    Tensor<S> y = add(x, wo.forward(ctx, attention(wq.forward(ctx, h), wk.forward(ctx, h),
                                                   wv.forward(ctx, h), heads)));
    if (cond_token) {
      h = ln2.forward(ctx, y);
      Tensor<S> key = ck.forward(ctx, *cond_token);
      Tensor<S> val = cv.forward(ctx, *cond_token);
      y = add(y, co.forward(ctx, attention(cq.forward(ctx, h), key, val, heads)));
    }
    h = ln3.forward(ctx, y);
    return add(y, mlp2.forward(ctx, gelu(mlp1.forward(ctx, h))));
  }
};

// Velocity network: per-position latent tokens at constant resolution, a
// sinusoidal embedding of the local pseudo-timestep added to each token, and
// cross-attention to a single condition token. No positional encoding
// anywhere, so the same weights run at any latent resolution.
template <typename S>
struct Dit {
  DitConfig cfg;
  int latent_ch = 0;
  Linear<S> embed;
  std::vector<DitBlock<S>> blocks;
  LayerNormLayer<S> ln_f;
  Linear<S> head;       // zero-init: the untrained flow is the identity map
  Linear<S> cond_proj;  // cond_dim -> width
  std::vector<S> freqs;

  Dit() = default;
  Dit(ParamStore<S>& ps, const std::string& prefix, const DitConfig& cfg_, int latent_ch_,
      Rng& rng)
      : cfg(cfg_), latent_ch(latent_ch_) {
    cfg.validate();
    embed = Linear<S>(ps, prefix + ".embed", latent_ch, cfg.width, rng);
    for (int i = 0; i < cfg.depth; ++i)
      blocks.emplace_back(ps, prefix + ".block" + std::to_string(i), cfg, rng);
    ln_f = LayerNormLayer<S>(ps, prefix + ".ln_f", cfg.width);
    head = Linear<S>(ps, prefix + ".head", cfg.width, latent_ch, rng, /*zero_init=*/true);
    cond_proj = Linear<S>(ps, prefix + ".cond_proj", cfg.cond_dim, cfg.width, rng);
    const int K = cfg.width / 2;
    for (int j = 0; j < K; ++j)
      freqs.push_back(static_cast<S>(
          std::exp(std::log(1000.0) * static_cast<double>(j) / static_cast<double>(K - 1))));
  }

  // y_hat: [C, h, w], t: [h, w] in [0, 1]; cond may be a null condition.
  Tensor<S> velocity(ForwardCtx<S>& ctx, const Tensor<S>& y_hat, const Tensor<S>& t,
                     const ConditionEmbedding<S>& cond) const {
    check_finite("velocity", y_hat);
    check_finite("velocity", t);
    if (y_hat.rank() != 3 || t.rank() != 2 || y_hat.dim(1) != t.dim(0) ||
        y_hat.dim(2) != t.dim(1))
      throw TensorError("velocity: shape mismatch " + shape_str(y_hat.shape()) + " vs " +
                        shape_str(t.shape()));
    const int h = y_hat.dim(1), w = y_hat.dim(2), L = h * w;
    Tensor<S> tokens = transpose2d(y_hat.reshaped({latent_ch, L}));
    Tensor<S> x = embed.forward(ctx, tokens);
    x = add(x, sincos_embed(t.reshaped({L}), freqs));
    std::optional<Tensor<S>> cond_token;
    if (cond.c.defined()) cond_token = cond_proj.forward(ctx, cond.c);
    for (const auto& blk : blocks) x = blk.forward(ctx, x, cond_token);
    Tensor<S> v = head.forward(ctx, ln_f.forward(ctx, x));
    return transpose2d(v).reshaped({latent_ch, h, w});
  }
};

// One-step reconstruction: the literal form y_hat - v, or the t-scaled
// variant y_hat - t*v (t broadcast over channels) behind the flow_mode flag.
template <typename S>
Tensor<S> one_step_reconstruct(const Dit<S>& dit, ForwardCtx<S>& ctx, const Tensor<S>& y_hat,
                               const Tensor<S>& t, const ConditionEmbedding<S>& cond,
                               FlowMode mode) {
  Tensor<S> v = dit.velocity(ctx, y_hat, t, cond);
  if (mode == FlowMode::kLiteral) return sub(y_hat, v);
  const int c = y_hat.dim(0), L = y_hat.dim(1) * y_hat.dim(2);
  Tensor<S> scaled = col_scale(v.reshaped({c, L}), t.reshaped({L}));
  return sub(y_hat, scaled.reshaped(y_hat.shape()));
}

// Latent-derived condition: global average pool -> 2-layer MLP -> unit norm.
template <typename S>
struct LatentCondition {
  Linear<S> fc1, fc2;
  int latent_ch = 0, cond_dim = 0;

  LatentCondition() = default;
  LatentCondition(ParamStore<S>& ps, const std::string& prefix, int latent_ch_, int cond_dim_,
                  Rng& rng)
      : fc1(ps, prefix + ".fc1", latent_ch_, 64, rng),
        fc2(ps, prefix + ".fc2", 64, cond_dim_, rng),
        latent_ch(latent_ch_),
        cond_dim(cond_dim_) {}

  ConditionEmbedding<S> forward(ForwardCtx<S>& ctx, const Tensor<S>& y_hat) const {
    const int L = y_hat.dim(1) * y_hat.dim(2);
    Tensor<S> pooled = mean_cols(y_hat.reshaped({latent_ch, L})).reshaped({1, latent_ch});
    Tensor<S> e = fc2.forward(ctx, gelu(fc1.forward(ctx, pooled)));
    Tensor<S> norm = sqrt(add_scalar(sum(square(e)), static_cast<S>(1e-20)));
    return ConditionEmbedding<S>{mul_bcast_scalar(e, reciprocal(norm)),
                                 ConditionEmbedding<S>::Source::kLatent};
  }
};

}  // namespace ditic
