#include <doctest.h>

#include "ditic/gradcheck.hpp"
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

TEST_CASE("context schedule partitions the grid in a fixed order") {
  ContextSchedule sched(6, 5);
  Tensor<float> fills({1, 6, 5});
  for (int step = 1; step <= 4; ++step) {
    Tensor<float> m = sched.mask<float>(step, 1);
    for (int64_t i = 0; i < m.size(); ++i) fills.mutable_data()[i] += m[i];
  }
  for (int64_t i = 0; i < fills.size(); ++i) CHECK(fills[i] == 1.0f);
  CHECK(ContextSchedule::group_of(0, 0) == 0);
  CHECK(ContextSchedule::group_of(1, 1) == 1);
  CHECK(ContextSchedule::group_of(0, 1) == 2);
  CHECK(ContextSchedule::group_of(1, 0) == 3);
  CHECK_THROWS_AS(sched.mask<float>(5, 1), TensorError);
}

TEST_CASE("context step 1 is invariant to any latent change") {
  CodecModel<float> model(tiny_config());
  ForwardCtx<float> ctx = model.make_ctx(nullptr);
  Rng rng(11);
  ContextSchedule sched(8, 8);
  Tensor<float> feats = Tensor<float>::rand_uniform({12, 8, 8}, rng, -1.0f, 1.0f);
  Tensor<float> a = Tensor<float>::rand_uniform({8, 8, 8}, rng, -2.0f, 2.0f);
  Tensor<float> b = Tensor<float>::rand_uniform({8, 8, 8}, rng, -2.0f, 2.0f);
  GaussianParams<float> pa = model.ctxm.step_params(ctx, a, feats, 1, sched);
  GaussianParams<float> pb = model.ctxm.step_params(ctx, b, feats, 1, sched);
  for (int64_t i = 0; i < pa.mu.size(); ++i) {
    REQUIRE(pa.mu[i] == pb.mu[i]);
    REQUIRE(pa.sigma[i] == pb.sigma[i]);
  }
  CHECK_THROWS_AS(model.ctxm.step_params(ctx, a, feats, 0, sched), TensorError);
  CHECK_THROWS_AS(model.ctxm.step_params(ctx, a, feats, 5, sched), TensorError);
}

TEST_CASE("causality: zeroing future groups never changes a step's output") {
  CodecModel<float> model(tiny_config());
  ForwardCtx<float> ctx = model.make_ctx(nullptr);
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(100 + seed);
    ContextSchedule sched(8, 8);
    Tensor<float> feats = Tensor<float>::rand_uniform({12, 8, 8}, rng, -1.0f, 1.0f);
    Tensor<float> latents = Tensor<float>::rand_uniform({8, 8, 8}, rng, -2.0f, 2.0f);
    for (int step = 1; step <= 4; ++step) {
      // Future (and current) groups zeroed by hand.
      Tensor<float> zeroed = latents.clone();
      float* zd = zeroed.mutable_data();
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
          if (ContextSchedule::group_of(y, x) >= step - 1)
            for (int c = 0; c < 8; ++c) zd[(c * 8 + y) * 8 + x] = 0.0f;
      GaussianParams<float> p1 = model.ctxm.step_params(ctx, latents, feats, step, sched);
      GaussianParams<float> p2 = model.ctxm.step_params(ctx, zeroed, feats, step, sched);
      for (int64_t i = 0; i < p1.mu.size(); ++i) {
        REQUIRE(p1.mu[i] == p2.mu[i]);
        REQUIRE(p1.sigma[i] == p2.sigma[i]);
      }
    }
  }
}

TEST_CASE("perturbing a group-3 position never changes steps 1..3") {
  CodecModel<float> model(tiny_config());
  ForwardCtx<float> ctx = model.make_ctx(nullptr);
  Rng rng(12);
  ContextSchedule sched(8, 8);
  Tensor<float> feats = Tensor<float>::rand_uniform({12, 8, 8}, rng, -1.0f, 1.0f);
  Tensor<float> latents = Tensor<float>::rand_uniform({8, 8, 8}, rng, -2.0f, 2.0f);
  Tensor<float> bumped = latents.clone();
  // (0,1) belongs to group 3 (even row, odd col).
  bumped.mutable_data()[(2 * 8 + 0) * 8 + 1] += 7.5f;
  for (int step = 1; step <= 3; ++step) {
    GaussianParams<float> p1 = model.ctxm.step_params(ctx, latents, feats, step, sched);
    GaussianParams<float> p2 = model.ctxm.step_params(ctx, bumped, feats, step, sched);
    for (int64_t i = 0; i < p1.mu.size(); ++i) REQUIRE(p1.mu[i] == p2.mu[i]);
  }
}

TEST_CASE("full sweep covers every position with finite params") {
  CodecModel<float> model(tiny_config());
  ForwardCtx<float> ctx = model.make_ctx(nullptr);
  Rng rng(13);
  ContextSchedule sched(8, 8);
  Tensor<float> feats = Tensor<float>::rand_uniform({12, 8, 8}, rng, -1.0f, 1.0f);
  Tensor<float> latents = Tensor<float>::rand_uniform({8, 8, 8}, rng, -2.0f, 2.0f);
  GaussianParams<float> full = model.ctxm.assemble(ctx, latents, feats, sched);
  CHECK(full.mu.finite());
  CHECK(full.sigma.finite());
  for (int64_t i = 0; i < full.sigma.size(); ++i) CHECK(full.sigma[i] >= 0.11f);
}

TEST_CASE("gaussian rate: erf-oracle value at unit sigma") {
  // -log2(Phi(1/2) - Phi(-1/2)) per element, from the high-precision erf.
  const double p = std::erf(0.5 / std::sqrt(2.0));
  const double expected = -std::log2(p);  // ~1.3848
  CHECK(expected == doctest::Approx(1.3848).epsilon(1e-3));

  const int n = 7;
  Tensor<double> y({1, n, 1});
  Tensor<double> mu({1, n, 1});
  Tensor<double> sg = Tensor<double>::full({1, n, 1}, 1.0);
  double bits = gaussian_rate_bits(y, mu, sg).item();
  CHECK(bits == doctest::Approx(n * expected).epsilon(1e-9));
}

TEST_CASE("gaussian rate: concentrated limit and monotone decrease as sigma drops") {
  Tensor<double> y({1, 1, 1});
  Tensor<double> mu({1, 1, 1});
  double prev = 1e300;
  for (double s : {4.0, 1.0, 0.4, 0.2, 0.11}) {
    double bits = gaussian_rate_bits(y, mu, Tensor<double>::full({1, 1, 1}, s)).item();
    CHECK(bits < prev);
    prev = bits;
  }
  // At the floor, the residual-0 probability is erf(0.5/(0.11*sqrt(2))).
  double at_floor = gaussian_rate_bits(y, mu, Tensor<double>::full({1, 1, 1}, 0.11)).item();
  CHECK(at_floor == doctest::Approx(-std::log2(std::erf(0.5 / (0.11 * std::sqrt(2.0)))))
                        .epsilon(1e-9));
  CHECK(at_floor < 1e-5);  // ~0 bits
}

TEST_CASE("gaussian rate: code-length bowl in sigma accuracy") {
  for (double r : {0.7, 1.9, 3.0}) {
    Tensor<double> y = Tensor<double>::full({1, 1, 1}, r);
    Tensor<double> mu({1, 1, 1});
    auto bits = [&](double s) {
      return gaussian_rate_bits(y, mu, Tensor<double>::full({1, 1, 1}, s)).item();
    };
    CHECK(bits(r) < bits(8 * r));
    CHECK(bits(r) < bits(std::max(r / 8, 0.11)));
  }
}

TEST_CASE("gaussian rate: additivity and the sigma floor check") {
  Rng rng(14);
  Tensor<double> y1 = Tensor<double>::rand_uniform({2, 3, 3}, rng, -3.0, 3.0);
  Tensor<double> y2 = Tensor<double>::rand_uniform({3, 3, 3}, rng, -3.0, 3.0);
  Tensor<double> m1 = Tensor<double>::rand_uniform({2, 3, 3}, rng, -1.0, 1.0);
  Tensor<double> m2 = Tensor<double>::rand_uniform({3, 3, 3}, rng, -1.0, 1.0);
  Tensor<double> s1 = Tensor<double>::rand_uniform({2, 3, 3}, rng, 0.2, 2.0);
  Tensor<double> s2 = Tensor<double>::rand_uniform({3, 3, 3}, rng, 0.2, 2.0);
  const double parts = gaussian_rate_bits(y1, m1, s1).item() + gaussian_rate_bits(y2, m2, s2).item();
  Tensor<double> yc = concat_channels(y1, y2);
  Tensor<double> mc = concat_channels(m1, m2);
  Tensor<double> sc = concat_channels(s1, s2);
  CHECK(gaussian_rate_bits(yc, mc, sc).item() == doctest::Approx(parts).epsilon(1e-12));

  Tensor<double> bad = Tensor<double>::full({2, 3, 3}, 0.05);
  CHECK_THROWS_WITH_AS(gaussian_rate_bits(y1, m1, bad), doctest::Contains("sigma below floor"),
                       TensorError);
}

TEST_CASE("rate gradients match finite differences") {
  Rng rng(15);
  Tensor<double> y = Tensor<double>::rand_uniform({2, 2, 2}, rng, -2.0, 2.0);
  Tensor<double> mu = Tensor<double>::rand_uniform({2, 2, 2}, rng, -1.0, 1.0);
  Tensor<double> sg0 = Tensor<double>::rand_uniform({2, 2, 2}, rng, 0.3, 2.0);

  auto f_sigma = [&](const Tensor<double>& s) { return gaussian_rate_bits(y, mu, s); };
  CHECK(finite_diff_gradcheck<double>(f_sigma, sg0, 1e-5).max_rel_err < 1e-4);

  auto f_y = [&](const Tensor<double>& yy) { return gaussian_rate_bits(yy, mu, sg0); };
  CHECK(finite_diff_gradcheck<double>(f_y, y, 1e-5).max_rel_err < 1e-4);
}

TEST_CASE("factorized prior: normalization, positivity, gradients") {
  ParamStore<double> ps;
  Rng rng(16);
  FactorizedPrior<double> prior(ps, "prior", 2, rng);
  ForwardCtx<double> ctx(ps, nullptr);

  // CDF bin masses over a wide integer support sum to <= 1 per channel.
  for (int c = 0; c < 2; ++c) {
    double total = 0;
    for (int k = -64; k <= 64; ++k)
      total += prior.cdf_value(ps, c, k + 0.5) - prior.cdf_value(ps, c, k - 0.5);
    CHECK(total <= 1.0 + 1e-9);
    CHECK(total > 0.5);
    // Monotone along the axis.
    double prev = -1;
    for (double x = -20; x <= 20; x += 0.5) {
      const double v = prior.cdf_value(ps, c, x);
      CHECK(v >= prev);
      prev = v;
    }
  }

  Tensor<double> zeros({2, 3, 3});
  const double bits0 = prior.rate_bits(ctx, zeros).item();
  CHECK(bits0 > 0.0);
  CHECK(std::isfinite(bits0));

  Rng r2(17);
  Tensor<double> z = Tensor<double>::rand_uniform({2, 3, 3}, r2, -3.0, 3.0);
  CHECK(prior.rate_bits(ctx, z).item() >= 0.0);

  // Differentiable w.r.t. z (noise-relaxed path).
  auto f = [&](const Tensor<double>& zz) {
    ForwardCtx<double> c2(ps, zz.tape());
    return prior.rate_bits(c2, zz);
  };
  CHECK(finite_diff_gradcheck<double>(f, z, 1e-5).max_rel_err < 1e-4);

  // Tensor path and raw path agree.
  Tensor<double> probe = Tensor<double>::rand_uniform({2, 4, 4}, r2, -4.0, 4.0);
  Tensor<double> flat = probe.reshaped({2, 16});
  for (int c = 0; c < 2; ++c) {
    Tensor<double> row = slice_rows(flat, c, 1);
    Tensor<double> v = prior.cdf(ctx, c, row);
    for (int i = 0; i < 16; ++i)
      CHECK(v[i] == doctest::Approx(prior.cdf_value(ps, c, row[i])).epsilon(1e-12));
  }
}

TEST_CASE("factorized prior coder table covers the learned distribution") {
  ParamStore<double> ps;
  Rng rng(18);
  FactorizedPrior<double> prior(ps, "prior", 1, rng);
  CdfTable t = prior.table(ps, 0, 32);
  CHECK(t.offset == -32);
  CHECK(t.num_values == 65);
  CHECK(t.cum.back() == kCdfTotal);
}
