#pragma once

#include "ditic/checkpoint.hpp"
#include "ditic/container.hpp"
#include "ditic/model.hpp"

namespace ditic {

// Canonical parameter digest: FNV-1a over the sorted checkpoint encoding, so
// a model freshly built in memory and one reloaded from its file agree.
template <typename S>
uint32_t params_digest(const CodecModel<S>& model) {
  const std::string bytes = serialize_checkpoint(store_records(model.params));
  return hash32(reinterpret_cast<const uint8_t*>(bytes.data()), bytes.size());
}

inline int lambda_index_of(double lambda) {
  static const double kLadder[] = {0.1, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0};
  int best = 0;
  double bd = 1e300;
  for (int i = 0; i < 7; ++i) {
    const double d = std::fabs(lambda - kLadder[i]);
    if (d < bd) {
      bd = d;
      best = i;
    }
  }
  return best;
}

template <typename S>
struct EncodeResult {
  BitstreamContainer container;
  double bpp_actual = 0;
  double bpp_estimated = 0;
  Tensor<S> y_hat_scaled;  // encoder-side quantized latent (scaled domain)
};

namespace detail {

// Hyper latent extents after the internal pad-to-even and one 2x reduction.
inline std::pair<int, int> hyper_extents(int h, int w) {
  return {(h + (h & 1)) / 2, (w + (w & 1)) / 2};
}

template <typename S>
int round_residual(S value) {
  const double r = std::round(static_cast<double>(value));
  return static_cast<int>(r);
}

}  // namespace detail

// Deterministic encode: pad, analysis transform, gain, coded hyper latent,
// then the 4-step context sweep quantizing group by group. The encoder
// materializes y_hat exactly as the decoder will (symbol + mu), so both
// sides hold bit-identical latents.
template <typename S>
EncodeResult<S> encode_image(CodecModel<S>& model, const Tensor<S>& image, uint32_t model_hash,
                             int lambda_index) {
  if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) < 1 || image.dim(2) < 1)
    throw TensorError("encode: expected a [3, H, W] image");
  const int f = model.cfg.down_factor;
  ForwardCtx<S> ctx = model.make_ctx(nullptr);

  auto [x_pad, pad] = pad_to_multiple(image, f);
  Tensor<S> y = model.ga.forward(ctx, x_pad);
  Tensor<S> y_s = model.gain.scale_down(ctx, y);
  const int C = y.dim(0), h = y.dim(1), w = y.dim(2);

  // Hyper stream.
  Tensor<S> z = model.ha.forward(ctx, y_s);
  Tensor<S> z_hat = round_hard(z);
  std::vector<CdfTable> ztabs;
  for (int c = 0; c < model.cfg.hyper_channels; ++c)
    ztabs.push_back(model.prior.table(model.params, c));
  StreamEncoder zenc;
  const int zh = z.dim(1), zw = z.dim(2);
  for (int c = 0; c < model.cfg.hyper_channels; ++c)
    for (int p = 0; p < zh * zw; ++p)
      zenc.put(detail::round_residual(z_hat[c * zh * zw + p]), ztabs[static_cast<size_t>(c)]);
  Bitstream z_stream = zenc.finish();

  Tensor<S> hyper_feats = model.hs.forward(ctx, z_hat, h, w);

  // 4-step sweep: quantize each group under the params predicted from the
  // groups already coded.
  ContextSchedule sched(h, w);
  Tensor<S> y_hat_s({C, h, w});
  Tensor<S> mu_full({C, h, w}), sg_full({C, h, w});
  StreamEncoder yenc;
  for (int step = 1; step <= ContextSchedule::kSteps; ++step) {
    GaussianParams<S> gp = model.ctxm.step_params(ctx, y_hat_s, hyper_feats, step, sched);
    for (int yy = 0; yy < h; ++yy)
      for (int xx = 0; xx < w; ++xx) {
        if (ContextSchedule::group_of(yy, xx) != step - 1) continue;
        for (int c = 0; c < C; ++c) {
          const int64_t idx = (static_cast<int64_t>(c) * h + yy) * w + xx;
          const S mu = gp.mu[idx];
          const S sg = gp.sigma[idx];
          const int sym = detail::round_residual(y_s[idx] - mu);
          yenc.put(sym, gaussian_cdf_table(0.0, static_cast<double>(sg)));
          y_hat_s.mutable_data()[idx] = static_cast<S>(sym) + mu;
          mu_full.mutable_data()[idx] = mu;
          sg_full.mutable_data()[idx] = sg;
        }
      }
  }
  Bitstream y_stream = yenc.finish();

  EncodeResult<S> out;
  out.container.flags = model.cfg.flow_mode == FlowMode::kTScaled ? kFlagTScaled : 0;
  out.container.width = static_cast<uint16_t>(image.dim(2));
  out.container.height = static_cast<uint16_t>(image.dim(1));
  out.container.pad_right = static_cast<uint8_t>(pad.pad_right);
  out.container.pad_bottom = static_cast<uint8_t>(pad.pad_bottom);
  out.container.lambda_index = static_cast<uint8_t>(lambda_index);
  out.container.model_hash = model_hash;
  out.container.z_stream = std::move(z_stream.bytes);
  out.container.y_stream = std::move(y_stream.bytes);

  const double pixels = static_cast<double>(image.dim(1)) * image.dim(2);
  out.bpp_actual =
      8.0 * static_cast<double>(out.container.z_stream.size() + out.container.y_stream.size()) /
      pixels;
  const double est_y =
      static_cast<double>(gaussian_rate_bits(y_hat_s, mu_full, sg_full).item());
  const double est_z = static_cast<double>(model.prior.rate_bits(ctx, z_hat).item());
  out.bpp_estimated = (est_y + est_z) / pixels;
  out.y_hat_scaled = y_hat_s;
  return out;
}

template <typename S>
struct DecodeResult {
  Tensor<S> image;         // [3, H, W] in [0, 1], padding stripped
  Tensor<S> y_hat_scaled;  // decoded latent (scaled domain)
};

template <typename S>
DecodeResult<S> decode_image(CodecModel<S>& model, const BitstreamContainer& c,
                             uint32_t expected_hash) {
  if (c.model_hash != expected_hash)
    throw ContainerError("decode: model hash mismatch (container " +
                         std::to_string(c.model_hash) + ", checkpoint " +
                         std::to_string(expected_hash) + ")");
  const bool container_tscaled = (c.flags & kFlagTScaled) != 0;
  if (container_tscaled != (model.cfg.flow_mode == FlowMode::kTScaled))
    throw ContainerError("decode: flow_mode mismatch between container and checkpoint");

  const int f = model.cfg.down_factor;
  const int Hp = c.height + c.pad_bottom, Wp = c.width + c.pad_right;
  if (Hp % f || Wp % f) throw ContainerError("decode: padded extents not divisible");
  const int h = Hp / f, w = Wp / f;
  const int C = model.cfg.latent_channels;
  ForwardCtx<S> ctx = model.make_ctx(nullptr);

  // Hyper latent.
  auto [zh, zw] = detail::hyper_extents(h, w);
  Tensor<S> z_hat({model.cfg.hyper_channels, zh, zw});
  {
    Bitstream zs;
    zs.bytes = c.z_stream;
    zs.bit_len = 8 * zs.bytes.size();
    StreamDecoder zdec(zs);
    std::vector<CdfTable> ztabs;
    for (int ch = 0; ch < model.cfg.hyper_channels; ++ch)
      ztabs.push_back(model.prior.table(model.params, ch));
    S* zd = z_hat.mutable_data();
    for (int ch = 0; ch < model.cfg.hyper_channels; ++ch)
      for (int p = 0; p < zh * zw; ++p)
        zd[ch * zh * zw + p] = static_cast<S>(zdec.get(ztabs[static_cast<size_t>(ch)]));
  }
  Tensor<S> hyper_feats = model.hs.forward(ctx, z_hat, h, w);

  // 4-step context decode.
  ContextSchedule sched(h, w);
  Tensor<S> y_hat_s({C, h, w});
  Tensor<S> sg_full({C, h, w});
  Bitstream ys;
  ys.bytes = c.y_stream;
  ys.bit_len = 8 * ys.bytes.size();
  StreamDecoder ydec(ys);
  for (int step = 1; step <= ContextSchedule::kSteps; ++step) {
    GaussianParams<S> gp = model.ctxm.step_params(ctx, y_hat_s, hyper_feats, step, sched);
    for (int yy = 0; yy < h; ++yy)
      for (int xx = 0; xx < w; ++xx) {
        if (ContextSchedule::group_of(yy, xx) != step - 1) continue;
        for (int ch = 0; ch < C; ++ch) {
          const int64_t idx = (static_cast<int64_t>(ch) * h + yy) * w + xx;
          const S mu = gp.mu[idx];
          const S sg = gp.sigma[idx];
          const int sym = ydec.get(gaussian_cdf_table(0.0, static_cast<double>(sg)));
          y_hat_s.mutable_data()[idx] = static_cast<S>(sym) + mu;
          sg_full.mutable_data()[idx] = sg;
        }
      }
  }

  // Variance-guided one-step reconstruction, then the synthesis transform.
  Tensor<S> t = model.timestep_field(ctx, sg_full);
  Tensor<S> y_hat = model.gain.scale_up(ctx, y_hat_s);
  ConditionEmbedding<S> cond = model.condition_for(ctx, y_hat);
  Tensor<S> y0 = one_step_reconstruct(model.dit, ctx, y_hat, t, cond, model.cfg.flow_mode);
  Tensor<S> x_rec = clamp(model.gs.forward(ctx, y0), S(0), S(1));

  DecodeResult<S> out;
  PadInfo pad;
  pad.orig_h = c.height;
  pad.orig_w = c.width;
  pad.pad_bottom = c.pad_bottom;
  pad.pad_right = c.pad_right;
  out.image = strip_padding(x_rec, pad);
  out.y_hat_scaled = y_hat_s;
  return out;
}

// Full roundtrip without touching disk; used by eval and tests.
template <typename S>
struct RoundtripResult {
  EncodeResult<S> enc;
  DecodeResult<S> dec;
};

template <typename S>
RoundtripResult<S> roundtrip_image(CodecModel<S>& model, const Tensor<S>& image,
                                   int lambda_index = 0) {
  const uint32_t digest = params_digest(model);
  RoundtripResult<S> out;
  out.enc = encode_image(model, image, digest, lambda_index);
  out.dec = decode_image(model, out.enc.container, digest);
  return out;
}

}  // namespace ditic
