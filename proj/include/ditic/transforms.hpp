#pragma once

#include <utility>
#include <vector>

#include "ditic/layers.hpp"

namespace ditic {

struct PadInfo {
  int orig_h = 0, orig_w = 0;
  int pad_bottom = 0, pad_right = 0;
};

// Pads bottom/right by symmetric reflection so spatial extents become
// multiples of `factor`. strip_padding(pad_to_multiple(x)) == x bit-exactly.
template <typename S>
std::pair<Tensor<S>, PadInfo> pad_to_multiple(const Tensor<S>& x, int factor) {
  if (x.rank() != 3 || x.dim(1) < 1 || x.dim(2) < 1)
    throw TensorError("pad_to_multiple: empty image");
  PadInfo info;
  info.orig_h = x.dim(1);
  info.orig_w = x.dim(2);
  info.pad_bottom = (factor - info.orig_h % factor) % factor;
  info.pad_right = (factor - info.orig_w % factor) % factor;
  if (info.pad_bottom == 0 && info.pad_right == 0) return {x, info};
  return {reflect_pad(x, 0, info.pad_bottom, 0, info.pad_right), info};
}

template <typename S>
Tensor<S> strip_padding(const Tensor<S>& x, const PadInfo& info) {
  if (info.pad_bottom == 0 && info.pad_right == 0) return x;
  return crop2d(x, 0, 0, info.orig_h, info.orig_w);
}

enum class QuantMode { kNoise, kRound };

// Mean-centered rounding with a straight-through gradient; the coded
// residual round(y - mu) is integral by construction.
template <typename S>
Tensor<S> quantize_round(const Tensor<S>& y, const Tensor<S>& mu) {
  check_same_shape("quantize", y, mu);
  return add(round_st(sub(y, mu)), mu);
}

// Additive-noise relaxation used in training; `noise` is pre-sampled
// Uniform(-1/2, 1/2) so a training step is a deterministic function of it.
template <typename S>
Tensor<S> quantize_noise(const Tensor<S>& y, const Tensor<S>& noise) {
  check_same_shape("quantize", y, noise);
  return add(y, noise);
}

template <typename S>
Tensor<S> quantize(const Tensor<S>& y, const Tensor<S>& mu, QuantMode mode, Rng& rng) {
  if (mode == QuantMode::kRound) return quantize_round(y, mu);
  Tensor<S> u(y.shape());
  S* d = u.mutable_data();
  for (int64_t i = 0; i < u.size(); ++i) d[i] = static_cast<S>(rng.uniform() - 0.5);
  return quantize_noise(y, u);
}

// Strided conv stages with DepthConvBlocks between them; spatial reduction
// is 2^stages = down_factor.
template <typename S>
struct AnalysisEncoder {
  std::vector<Conv2dLayer<S>> downs;
  std::vector<DepthConvBlock<S>> blocks;
  Conv2dLayer<S> head;
  int down_factor = 8;

  AnalysisEncoder() = default;
  AnalysisEncoder(ParamStore<S>& ps, const std::string& prefix, int in_ch, int latent_ch,
                  const std::vector<int>& widths, Rng& rng) {
    down_factor = 1 << static_cast<int>(widths.size());
    int c = in_ch;
    for (size_t i = 0; i < widths.size(); ++i) {
      downs.emplace_back(ps, prefix + ".down" + std::to_string(i), c, widths[i], 3, 2, rng);
      blocks.emplace_back(ps, prefix + ".block" + std::to_string(i), widths[i], rng);
      c = widths[i];
    }
    head = Conv2dLayer<S>(ps, prefix + ".head", c, latent_ch, 1, 1, rng);
  }

  // x: [3, H, W] with H, W multiples of down_factor; pixel values in [0, 1].
  Tensor<S> forward(ForwardCtx<S>& ctx, const Tensor<S>& x) const {
    Tensor<S> h = x;
    for (size_t i = 0; i < downs.size(); ++i) {
      h = gelu(downs[i].forward(ctx, h));
      h = blocks[i].forward(ctx, h);
    }
    return head.forward(ctx, h);
  }
};

// Mirror of the encoder: 1x1 head, then upsample + conv stages. The output
// is linear; clamping to [0, 1] happens at the eval boundary.
template <typename S>
struct SynthesisDecoder {
  Conv2dLayer<S> head;
  std::vector<DepthConvBlock<S>> blocks;
  std::vector<Conv2dLayer<S>> ups;
  Conv2dLayer<S> out;

  SynthesisDecoder() = default;
  SynthesisDecoder(ParamStore<S>& ps, const std::string& prefix, int latent_ch, int out_ch,
                   const std::vector<int>& widths, Rng& rng) {
    // widths given encoder-order; walk them backwards.
    std::vector<int> ws(widths.rbegin(), widths.rend());
    head = Conv2dLayer<S>(ps, prefix + ".head", latent_ch, ws[0], 1, 1, rng);
    for (size_t i = 0; i < ws.size(); ++i) {
      blocks.emplace_back(ps, prefix + ".block" + std::to_string(i), ws[i], rng);
      const int next = i + 1 < ws.size() ? ws[i + 1] : ws.back();
      ups.emplace_back(ps, prefix + ".up" + std::to_string(i), ws[i], next, 3, 1, rng);
    }
    out = Conv2dLayer<S>(ps, prefix + ".out", ws.back(), out_ch, 3, 1, rng);
  }

  Tensor<S> forward(ForwardCtx<S>& ctx, const Tensor<S>& y) const {
    Tensor<S> h = head.forward(ctx, y);
    for (size_t i = 0; i < blocks.size(); ++i) {
      h = blocks[i].forward(ctx, h);
      h = gelu(ups[i].forward(ctx, upsample_nearest2x(h)));
    }
    return out.forward(ctx, h);
  }
};

// Hyper encoder: one extra 2x reduction. Odd latent extents are padded to
// even internally, never an error.
template <typename S>
struct HyperEncoder {
  Conv2dLayer<S> c1, c2, c3;

  HyperEncoder() = default;
  HyperEncoder(ParamStore<S>& ps, const std::string& prefix, int latent_ch, int hyper_ch,
               int width, Rng& rng)
      : c1(ps, prefix + ".c1", latent_ch, width, 3, 1, rng),
        c2(ps, prefix + ".c2", width, width, 3, 2, rng),
        c3(ps, prefix + ".c3", width, hyper_ch, 1, 1, rng) {}

  Tensor<S> forward(ForwardCtx<S>& ctx, const Tensor<S>& y) const {
    Tensor<S> h = y;
    if (h.dim(1) % 2 || h.dim(2) % 2) h = reflect_pad(h, 0, h.dim(1) % 2, 0, h.dim(2) % 2);
    h = gelu(c1.forward(ctx, h));
    h = gelu(c2.forward(ctx, h));
    return c3.forward(ctx, h);
  }
};

template <typename S>
struct HyperDecoder {
  Conv2dLayer<S> c1, c2, c3;

  HyperDecoder() = default;
  HyperDecoder(ParamStore<S>& ps, const std::string& prefix, int hyper_ch, int feat_ch, int width,
               Rng& rng)
      : c1(ps, prefix + ".c1", hyper_ch, width, 1, 1, rng),
        c2(ps, prefix + ".c2", width, width, 3, 1, rng),
        c3(ps, prefix + ".c3", width, feat_ch, 1, 1, rng) {}

  // Decodes conditioning features with the latent's spatial shape (h, w).
  Tensor<S> forward(ForwardCtx<S>& ctx, const Tensor<S>& z_hat, int h, int w) const {
    Tensor<S> f = gelu(c1.forward(ctx, z_hat));
    f = gelu(c2.forward(ctx, upsample_nearest2x(f)));
    f = c3.forward(ctx, f);
    if (f.dim(1) != h || f.dim(2) != w) f = crop2d(f, 0, 0, h, w);
    return f;
  }
};

// Learned per-channel quantization step. The coder works in the scaled
// domain y / g where residuals are integral; the flow and decoder consume
// g * y_scaled. Trainable in both stages (it lives outside the frozen
// "ga."/"ha." prefixes), which gives lambda a rate-distortion knob after the
// encoder freeze.
template <typename S>
struct GainUnit {
  int raw = -1;
  int channels = 0;

  GainUnit() = default;
  GainUnit(ParamStore<S>& ps, const std::string& prefix, int ch) : channels(ch) {
    // softplus(raw) + 0.05 == 1 at init
    raw = ps.add(prefix + ".gain_raw",
                 Tensor<S>::full({ch}, static_cast<S>(0.49269824086)), /*decay=*/false);
  }

  Tensor<S> gains(ForwardCtx<S>& ctx) const {
    return add_scalar(softplus(ctx.p(raw)), S(0.05));
  }

  Tensor<S> scale_down(ForwardCtx<S>& ctx, const Tensor<S>& y) const {
    const int h = y.dim(1), w = y.dim(2);
    Tensor<S> flat = y.reshaped({channels, h * w});
    return row_scale(flat, reciprocal(gains(ctx))).reshaped({channels, h, w});
  }

  Tensor<S> scale_up(ForwardCtx<S>& ctx, const Tensor<S>& y_scaled) const {
    const int h = y_scaled.dim(1), w = y_scaled.dim(2);
    Tensor<S> flat = y_scaled.reshaped({channels, h * w});
    return row_scale(flat, gains(ctx)).reshaped({channels, h, w});
  }
};

}  // namespace ditic
