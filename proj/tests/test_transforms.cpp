#include <doctest.h>

#include "ditic/model.hpp"

using namespace ditic;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.enc_widths = {12, 16, 24};
  cfg.hyper_feat_channels = 12;
  cfg.context_hidden = 16;
  cfg.dit.depth = 1;
  cfg.dit.width = 16;
  cfg.dit.heads = 2;
  cfg.dit.cond_dim = 8;
  return cfg;
}

}  // namespace

TEST_CASE("padding roundtrip is bit-exact for all sizes up to 3x factor") {
  const int f = 8;
  Rng rng(1);
  for (int h = 1; h <= 3 * f; h += 3)
    for (int w = 1; w <= 3 * f; w += 5) {
      Tensor<float> x = Tensor<float>::rand_uniform({3, h, w}, rng, 0.0f, 1.0f);
      auto [xp, info] = pad_to_multiple(x, f);
      CHECK(xp.dim(1) % f == 0);
      CHECK(xp.dim(2) % f == 0);
      Tensor<float> back = strip_padding(xp, info);
      REQUIRE(back.shape() == x.shape());
      for (int64_t i = 0; i < x.size(); ++i) REQUIRE(back[i] == x[i]);
    }
}

TEST_CASE("padding matches a naive mirror oracle") {
  Rng rng(2);
  Tensor<double> x = Tensor<double>::rand_uniform({1, 5, 6}, rng, -1.0, 1.0);
  Tensor<double> p = reflect_pad(x, 0, 3, 0, 2);
  auto mirror = [](int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * n;
    i = ((i % period) + period) % period;
    return i < n ? i : period - 1 - i;
  };
  for (int y = 0; y < 8; ++y)
    for (int xx = 0; xx < 8; ++xx)
      CHECK(p[y * 8 + xx] == x[mirror(y, 5) * 6 + mirror(xx, 6)]);
}

TEST_CASE("analysis encoder: shape contract and degenerate input") {
  CodecModel<float> model(tiny_config());
  ForwardCtx<float> ctx = model.make_ctx(nullptr);

  Rng rng(3);
  Tensor<float> x = Tensor<float>::rand_uniform({3, 64, 64}, rng, 0.0f, 1.0f);
  Tensor<float> y = model.ga.forward(ctx, x);
  CHECK(y.shape() == Shape{8, 8, 8});

  Tensor<float> zero({3, 64, 64});
  Tensor<float> yz = model.ga.forward(ctx, zero);
  CHECK(yz.finite());

  CHECK_THROWS_AS(pad_to_multiple(Tensor<float>({3, 0, 4}), 8), TensorError);
}

TEST_CASE("latent depends only on content inside the original extent") {
  CodecModel<float> model(tiny_config());
  ForwardCtx<float> ctx = model.make_ctx(nullptr);
  Rng rng(4);

  Tensor<float> interior = Tensor<float>::rand_uniform({3, 60, 61}, rng, 0.0f, 1.0f);
  auto [p1, i1] = pad_to_multiple(interior, 8);

  // A second route to the same interior: embed it in a larger junk canvas,
  // crop it back out, and preprocess again.
  Tensor<float> canvas = Tensor<float>::rand_uniform({3, 64, 64}, rng, 0.0f, 1.0f);
  float* cd = canvas.mutable_data();
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 60; ++y)
      for (int x = 0; x < 61; ++x)
        cd[(c * 64 + y) * 64 + x] = interior[(c * 60 + y) * 61 + x];
  Tensor<float> crop = crop2d(canvas, 0, 0, 60, 61);
  auto [p2, i2] = pad_to_multiple(crop, 8);

  Tensor<float> y1 = model.ga.forward(ctx, p1);
  Tensor<float> y2 = model.ga.forward(ctx, p2);
  REQUIRE(y1.size() == y2.size());
  for (int64_t i = 0; i < y1.size(); ++i) REQUIRE(y1[i] == y2[i]);
}

TEST_CASE("quantize: round mode fixed points and tie behavior") {
  Rng rng(5);
  Tensor<float> mu = Tensor<float>::rand_uniform({2, 3, 3}, rng, -2.0f, 2.0f);
  CHECK_THROWS_AS(quantize_round(Tensor<float>({2, 3, 4}), mu), TensorError);

  Tensor<float> y_eq = mu.clone();
  Tensor<float> q = quantize_round(y_eq, mu);
  for (int64_t i = 0; i < q.size(); ++i) CHECK(q[i] == mu[i]);

  // Residual just below one half rounds toward zero.
  Tensor<float> y = mu.clone();
  y.mutable_data()[0] += 0.5f - 1e-6f;
  q = quantize_round(y, mu);
  CHECK(q[0] == mu[0]);

  // Residuals are integral and the quantizer moves y by at most 1/2.
  Tensor<float> yr = Tensor<float>::rand_uniform({2, 3, 3}, rng, -4.0f, 4.0f);
  q = quantize_round(yr, mu);
  for (int64_t i = 0; i < q.size(); ++i) {
    const double resid = static_cast<double>(q[i]) - mu[i];
    CHECK(resid == doctest::Approx(std::round(resid)).epsilon(1e-6));
    CHECK(std::fabs(q[i] - yr[i]) <= 0.5 + 1e-6);
  }

  Rng nrng(6);
  Tensor<float> qn = quantize(yr, mu, QuantMode::kNoise, nrng);
  for (int64_t i = 0; i < qn.size(); ++i) CHECK(std::fabs(qn[i] - yr[i]) <= 0.5);
}

TEST_CASE("hyper roundtrip: shapes, noise range, eval determinism") {
  CodecModel<float> model(tiny_config());
  ForwardCtx<float> ctx = model.make_ctx(nullptr);
  Rng rng(7);
  Tensor<float> y = Tensor<float>::rand_uniform({8, 8, 8}, rng, -2.0f, 2.0f);

  Tensor<float> z = model.ha.forward(ctx, y);
  CHECK(z.shape() == Shape{8, 4, 4});

  // Odd latent extents pad internally, never an error.
  Tensor<float> y_odd = Tensor<float>::rand_uniform({8, 9, 7}, rng, -2.0f, 2.0f);
  Tensor<float> z_odd = model.ha.forward(ctx, y_odd);
  CHECK(z_odd.shape() == Shape{8, 5, 4});
  Tensor<float> f_odd = model.hs.forward(ctx, round_hard(z_odd), 9, 7);
  CHECK(f_odd.dim(1) == 9);
  CHECK(f_odd.dim(2) == 7);

  Tensor<float> z2 = model.ha.forward(ctx, y);
  for (int64_t i = 0; i < z.size(); ++i) REQUIRE(z[i] == z2[i]);

  Tensor<float> zh = round_hard(z);
  for (int64_t i = 0; i < zh.size(); ++i)
    CHECK(zh[i] == doctest::Approx(std::round(z[i])));
  Tensor<float> feats = model.hs.forward(ctx, zh, 8, 8);
  CHECK(feats.shape() == Shape{12, 8, 8});
  Tensor<float> feats2 = model.hs.forward(ctx, zh, 8, 8);
  for (int64_t i = 0; i < feats.size(); ++i) REQUIRE(feats[i] == feats2[i]);
}

TEST_CASE("synthesis decoder: shape, finiteness, clamped eval output") {
  CodecModel<float> model(tiny_config());
  ForwardCtx<float> ctx = model.make_ctx(nullptr);
  Rng rng(8);
  Tensor<float> y = Tensor<float>::rand_uniform({8, 8, 8}, rng, -3.0f, 3.0f);
  Tensor<float> x = model.gs.forward(ctx, y);
  CHECK(x.shape() == Shape{3, 64, 64});
  CHECK(x.finite());
  Tensor<float> xe = clamp(x, 0.0f, 1.0f);
  for (int64_t i = 0; i < xe.size(); ++i) {
    CHECK(xe[i] >= 0.0f);
    CHECK(xe[i] <= 1.0f);
  }
}

TEST_CASE("gain unit starts at identity scale and stays positive") {
  CodecModel<float> model(tiny_config());
  ForwardCtx<float> ctx = model.make_ctx(nullptr);
  Tensor<float> g = model.gain.gains(ctx);
  for (int64_t i = 0; i < g.size(); ++i) CHECK(g[i] == doctest::Approx(1.0f).epsilon(1e-5));
  Rng rng(9);
  Tensor<float> y = Tensor<float>::rand_uniform({8, 4, 4}, rng, -2.0f, 2.0f);
  Tensor<float> back = model.gain.scale_up(ctx, model.gain.scale_down(ctx, y));
  for (int64_t i = 0; i < y.size(); ++i) CHECK(back[i] == doctest::Approx(y[i]).epsilon(1e-5));
}

TEST_CASE("model config text roundtrip") {
  ModelConfig cfg = tiny_config();
  cfg.flow_mode = FlowMode::kTScaled;
  cfg.t_mode = TFieldMode::kGlobalMean;
  cfg.detach_sigma_to_t = true;
  KvConfig kv = cfg.to_kv();
  ModelConfig back = ModelConfig::from_kv(KvConfig::parse(kv.to_text()));
  CHECK(back.enc_widths == cfg.enc_widths);
  CHECK(back.flow_mode == cfg.flow_mode);
  CHECK(back.t_mode == cfg.t_mode);
  CHECK(back.detach_sigma_to_t == cfg.detach_sigma_to_t);
  CHECK(back.dit.width == cfg.dit.width);
}
