#pragma once

#include "ditic/config.hpp"
#include "ditic/entropy.hpp"
#include "ditic/losses.hpp"
#include "ditic/optim.hpp"

namespace ditic {

struct ModelConfig {
  int down_factor = 8;  // power of two; enc_widths.size() == log2(down_factor)
  int latent_channels = 8;
  int hyper_channels = 8;
  int hyper_feat_channels = 24;
  std::vector<int> enc_widths{24, 48, 64};
  int hyper_width = 24;
  int context_hidden = 48;
  DitConfig dit;
  FlowMode flow_mode = FlowMode::kLiteral;
  TFieldMode t_mode = TFieldMode::kPixelwise;
  double t_fixed = 0.5;
  bool detach_sigma_to_t = false;
  bool use_latent_cond = true;
  uint64_t init_seed = 1;

  void validate() const {
    dit.validate();
    int f = 1;
    for (size_t i = 0; i < enc_widths.size(); ++i) f *= 2;
    if (f != down_factor)
      throw ConfigError("model config: enc_widths must have log2(down_factor) entries");
    if (latent_channels < 1 || hyper_channels < 1)
      throw ConfigError("model config: bad channel counts");
  }

  KvConfig to_kv() const {
    KvConfig kv;
    kv.set("down_factor", std::to_string(down_factor));
    kv.set("latent_channels", std::to_string(latent_channels));
    kv.set("hyper_channels", std::to_string(hyper_channels));
    kv.set("hyper_feat_channels", std::to_string(hyper_feat_channels));
    std::string w;
    for (size_t i = 0; i < enc_widths.size(); ++i)
      w += (i ? "," : "") + std::to_string(enc_widths[i]);
    kv.set("enc_widths", w);
    kv.set("hyper_width", std::to_string(hyper_width));
    kv.set("context_hidden", std::to_string(context_hidden));
    kv.set("dit_depth", std::to_string(dit.depth));
    kv.set("dit_width", std::to_string(dit.width));
    kv.set("dit_heads", std::to_string(dit.heads));
    kv.set("dit_mlp_ratio", std::to_string(dit.mlp_ratio));
    kv.set("cond_dim", std::to_string(dit.cond_dim));
    kv.set("flow_mode", flow_mode == FlowMode::kLiteral ? "literal" : "tscaled");
    kv.set("t_mode", t_mode == TFieldMode::kPixelwise
                         ? "pixelwise"
                         : (t_mode == TFieldMode::kGlobalMean ? "global_mean" : "fixed"));
    kv.set("t_fixed", std::to_string(t_fixed));
    kv.set("detach_sigma_to_t", detach_sigma_to_t ? "1" : "0");
    kv.set("use_latent_cond", use_latent_cond ? "1" : "0");
    kv.set("init_seed", std::to_string(init_seed));
    return kv;
  }

  static ModelConfig from_kv(const KvConfig& kv) {
    ModelConfig c;
    c.down_factor = static_cast<int>(kv.get_int("down_factor", c.down_factor));
    c.latent_channels = static_cast<int>(kv.get_int("latent_channels", c.latent_channels));
    c.hyper_channels = static_cast<int>(kv.get_int("hyper_channels", c.hyper_channels));
    c.hyper_feat_channels =
        static_cast<int>(kv.get_int("hyper_feat_channels", c.hyper_feat_channels));
    c.enc_widths = kv.get_int_list("enc_widths", c.enc_widths);
    c.hyper_width = static_cast<int>(kv.get_int("hyper_width", c.hyper_width));
    c.context_hidden = static_cast<int>(kv.get_int("context_hidden", c.context_hidden));
    c.dit.depth = static_cast<int>(kv.get_int("dit_depth", c.dit.depth));
    c.dit.width = static_cast<int>(kv.get_int("dit_width", c.dit.width));
    c.dit.heads = static_cast<int>(kv.get_int("dit_heads", c.dit.heads));
    c.dit.mlp_ratio = static_cast<int>(kv.get_int("dit_mlp_ratio", c.dit.mlp_ratio));
    c.dit.cond_dim = static_cast<int>(kv.get_int("cond_dim", c.dit.cond_dim));
    const std::string fm = kv.get_str("flow_mode", "literal");
    if (fm == "literal")
      c.flow_mode = FlowMode::kLiteral;
    else if (fm == "tscaled")
      c.flow_mode = FlowMode::kTScaled;
    else
      throw ConfigError("model config: unknown flow_mode " + fm);
    const std::string tm = kv.get_str("t_mode", "pixelwise");
    if (tm == "pixelwise")
      c.t_mode = TFieldMode::kPixelwise;
    else if (tm == "global_mean")
      c.t_mode = TFieldMode::kGlobalMean;
    else if (tm == "fixed")
      c.t_mode = TFieldMode::kFixed;
    else
      throw ConfigError("model config: unknown t_mode " + tm);
    c.t_fixed = kv.get_double("t_fixed", c.t_fixed);
    c.detach_sigma_to_t = kv.get_bool("detach_sigma_to_t", false);
    c.use_latent_cond = kv.get_bool("use_latent_cond", true);
    c.init_seed = static_cast<uint64_t>(kv.get_int("init_seed", 1));
    c.validate();
    return c;
  }
};

// The full codec: analysis/synthesis transforms, hyperprior, 4-step context
// model, factorized prior, gain unit, variance->timestep map, DiT velocity
// field and latent condition head, all registered in one named store.
template <typename S>
struct CodecModel {
  ModelConfig cfg;
  ParamStore<S> params;
  AnalysisEncoder<S> ga;
  SynthesisDecoder<S> gs;
  HyperEncoder<S> ha;
  HyperDecoder<S> hs;
  GainUnit<S> gain;
  ContextModel<S> ctxm;
  FactorizedPrior<S> prior;
  Dit<S> dit;
  VarianceToTime<S> v2t;
  LatentCondition<S> lcond;
  std::vector<LoraSlot> lora;

  explicit CodecModel(const ModelConfig& cfg_) : cfg(cfg_) {
    cfg.validate();
    Rng rng(cfg.init_seed);
    ga = AnalysisEncoder<S>(params, "ga", 3, cfg.latent_channels, cfg.enc_widths, rng);
    gs = SynthesisDecoder<S>(params, "gs", cfg.latent_channels, 3, cfg.enc_widths, rng);
    ha = HyperEncoder<S>(params, "ha", cfg.latent_channels, cfg.hyper_channels, cfg.hyper_width,
                         rng);
    hs = HyperDecoder<S>(params, "hs", cfg.hyper_channels, cfg.hyper_feat_channels,
                         cfg.hyper_width, rng);
    gain = GainUnit<S>(params, "q", cfg.latent_channels);
    ctxm = ContextModel<S>(params, "ctx", cfg.latent_channels, cfg.hyper_feat_channels,
                           cfg.context_hidden, rng);
    prior = FactorizedPrior<S>(params, "prior", cfg.hyper_channels, rng);
    dit = Dit<S>(params, "dit", cfg.dit, cfg.latent_channels, rng);
    v2t = VarianceToTime<S>(params, "v2t", cfg.latent_channels, rng);
    lcond = LatentCondition<S>(params, "cproj", cfg.latent_channels, cfg.dit.cond_dim, rng);
  }

  ForwardCtx<S> make_ctx(Tape<S>* tape) {
    ForwardCtx<S> ctx(params, tape);
    for (const auto& slot : lora) ctx.attach_lora(slot);
    return ctx;
  }

  Tensor<S> timestep_field(ForwardCtx<S>& ctx, const Tensor<S>& sigma) const {
    Tensor<S> t = v2t.forward(ctx, sigma, cfg.detach_sigma_to_t);
    return apply_tfield_mode(t, cfg.t_mode, cfg.t_fixed);
  }

  ConditionEmbedding<S> condition_for(ForwardCtx<S>& ctx, const Tensor<S>& y_hat) const {
    if (!cfg.use_latent_cond)
      return ConditionEmbedding<S>::null_condition(cfg.dit.cond_dim);
    return lcond.forward(ctx, y_hat);
  }
};

// Per-image pieces of the training objective, all still on the tape.
template <typename S>
struct TrainForwardOut {
  Tensor<S> rate_bpp;     // (gaussian + factorized bits) / pixel count
  Tensor<S> mse;          // on the [0,1] pixel scale
  Tensor<S> distill;      // hinge-cosine alignment
  ConditionEmbedding<S> c_lat;
  int64_t num_pixels = 0;
};

// One image through the training graph: noise-mode quantization, 4-step
// context, rate, variance-guided one-step flow, decode, per-image losses.
template <typename S>
TrainForwardOut<S> train_forward_image(CodecModel<S>& model, ForwardCtx<S>& ctx,
                                       const Tensor<S>& image, Rng& noise_rng,
                                       const AlignConfig& acfg) {
  const int64_t pixels = static_cast<int64_t>(image.dim(1)) * image.dim(2);
  Tensor<S> y = model.ga.forward(ctx, image);
  Tensor<S> y_s = model.gain.scale_down(ctx, y);
  const int h = y.dim(1), w = y.dim(2);

  Tensor<S> z = model.ha.forward(ctx, y_s);
  Tensor<S> uz(z.shape());
  {
    S* d = uz.mutable_data();
    for (int64_t i = 0; i < uz.size(); ++i) d[i] = static_cast<S>(noise_rng.uniform() - 0.5);
  }
  Tensor<S> z_noisy = quantize_noise(z, uz);
  Tensor<S> hyper_feats = model.hs.forward(ctx, z_noisy, h, w);

  Tensor<S> uy(y_s.shape());
  {
    S* d = uy.mutable_data();
    for (int64_t i = 0; i < uy.size(); ++i) d[i] = static_cast<S>(noise_rng.uniform() - 0.5);
  }
  Tensor<S> y_hat_s = quantize_noise(y_s, uy);

  ContextSchedule sched(h, w);
  GaussianParams<S> gp = model.ctxm.assemble(ctx, y_hat_s, hyper_feats, sched);

  Tensor<S> rate_bits = add(gaussian_rate_bits(y_hat_s, gp.mu, gp.sigma),
                            model.prior.rate_bits(ctx, z_noisy));

  Tensor<S> t = model.timestep_field(ctx, gp.sigma);
  Tensor<S> y_hat = model.gain.scale_up(ctx, y_hat_s);
  ConditionEmbedding<S> c_lat = model.lcond.forward(ctx, y_hat);
  ConditionEmbedding<S> cond =
      model.cfg.use_latent_cond ? c_lat
                                : ConditionEmbedding<S>::null_condition(model.cfg.dit.cond_dim);
  Tensor<S> y0 = one_step_reconstruct(model.dit, ctx, y_hat, t, cond, model.cfg.flow_mode);
  Tensor<S> x_rec = model.gs.forward(ctx, y0);

  TrainForwardOut<S> out;
  out.rate_bpp = mul_scalar(rate_bits, S(1) / static_cast<S>(pixels));
  out.mse = mse(image, x_rec);
  out.distill = distill_loss(y0, y, static_cast<S>(acfg.margin));
  out.c_lat = c_lat;
  out.num_pixels = pixels;
  return out;
}

}  // namespace ditic
