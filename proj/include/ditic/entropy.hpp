#pragma once

#include <array>

#include "ditic/range_coder.hpp"
#include "ditic/transforms.hpp"

namespace ditic {

inline constexpr double kSigmaFloor = 0.11;
inline constexpr double kProbFloor = 3.5527136788005009e-15;  // 2^-48

template <typename S>
struct GaussianParams {
  Tensor<S> mu;     // [C, h, w]
  Tensor<S> sigma;  // [C, h, w], >= kSigmaFloor
};

// Four disjoint spatial groups covering the latent grid: the 2x2 sub-lattices
// ordered (even,even), (odd,odd), (even,odd), (odd,even). The order is fixed
// and identical on the encode and decode sides.
struct ContextSchedule {
  int h = 0, w = 0;
  static constexpr int kSteps = 4;

  ContextSchedule() = default;
  ContextSchedule(int h_, int w_) : h(h_), w(w_) {}

  static int group_of(int y, int x) {
    const bool ey = (y & 1) == 0, ex = (x & 1) == 0;
    if (ey && ex) return 0;
    if (!ey && !ex) return 1;
    if (ey) return 2;
    return 3;
  }

  // 1.0 on the positions of group `step` (1-based), broadcast over channels.
  template <typename S>
  Tensor<S> mask(int step, int channels) const {
    check_step(step);
    Tensor<S> m({channels, h, w});
    S* d = m.mutable_data();
    for (int c = 0; c < channels; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          d[(c * h + y) * w + x] = group_of(y, x) == step - 1 ? S(1) : S(0);
    return m;
  }

  // Union of groups decoded before `step`.
  template <typename S>
  Tensor<S> mask_before(int step, int channels) const {
    check_step(step);
    Tensor<S> m({channels, h, w});
    S* d = m.mutable_data();
    for (int c = 0; c < channels; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          d[(c * h + y) * w + x] = group_of(y, x) < step - 1 ? S(1) : S(0);
    return m;
  }

  static void check_step(int step) {
    if (step < 1 || step > kSteps)
      throw TensorError("context_params: step out of range: " + std::to_string(step));
  }
};

// Per-step context nets: depthwise conv over the already-decoded positions
// (enforced by masking inside the op) fused pointwise with hyper features.
// Step 1 sees an all-zero latent plane, so it depends on hyper features only.
template <typename S>
struct ContextModel {
  struct StepNet {
    DepthwiseLayer<S> dw;
    Conv2dLayer<S> f1, f2, head;
  };
  std::array<StepNet, ContextSchedule::kSteps> steps;
  int latent_ch = 0, feat_ch = 0, hidden = 0;

  ContextModel() = default;
  ContextModel(ParamStore<S>& ps, const std::string& prefix, int latent_ch_, int feat_ch_,
               int hidden_, Rng& rng)
      : latent_ch(latent_ch_), feat_ch(feat_ch_), hidden(hidden_) {
    for (int k = 0; k < ContextSchedule::kSteps; ++k) {
      const std::string p = prefix + ".s" + std::to_string(k + 1);
      steps[static_cast<size_t>(k)] = StepNet{
          DepthwiseLayer<S>(ps, p + ".dw", latent_ch, 5, rng),
          Conv2dLayer<S>(ps, p + ".f1", latent_ch + feat_ch, hidden, 1, 1, rng),
          Conv2dLayer<S>(ps, p + ".f2", hidden, hidden, 1, 1, rng),
          Conv2dLayer<S>(ps, p + ".head", hidden, 2 * latent_ch, 1, 1, rng,
                         /*zero_init=*/true)};
    }
  }

  // Full (mu, sigma) maps predicted by step `step`; callers read them on
  // groups[step]. Positions at groups >= step are masked to zero before the
  // network sees them, which is what makes the sweep decodable.
  GaussianParams<S> step_params(ForwardCtx<S>& ctx, const Tensor<S>& y_hat_partial,
                                const Tensor<S>& hyper_features, int step,
                                const ContextSchedule& sched) const {
    ContextSchedule::check_step(step);
    const int h = y_hat_partial.dim(1), w = y_hat_partial.dim(2);
    Tensor<S> seen = mul(y_hat_partial, sched.mask_before<S>(step, latent_ch));
    const StepNet& net = steps[static_cast<size_t>(step - 1)];
    Tensor<S> c = net.dw.forward(ctx, seen);
    Tensor<S> fused = concat_channels(c, hyper_features);
    Tensor<S> f = gelu(net.f1.forward(ctx, fused));
    f = gelu(net.f2.forward(ctx, f));
    Tensor<S> p = net.head.forward(ctx, f).reshaped({2 * latent_ch, h * w});
    GaussianParams<S> out;
    out.mu = slice_rows(p, 0, latent_ch).reshaped({latent_ch, h, w});
    out.sigma = add_scalar(softplus(slice_rows(p, latent_ch, latent_ch)),
                           static_cast<S>(kSigmaFloor))
                    .reshaped({latent_ch, h, w});
    return out;
  }

  // Training-time assembly: each position takes (mu, sigma) from its own
  // group's step, all four steps running on the same (masked) latents.
  GaussianParams<S> assemble(ForwardCtx<S>& ctx, const Tensor<S>& y_hat,
                             const Tensor<S>& hyper_features,
                             const ContextSchedule& sched) const {
    GaussianParams<S> full;
    for (int step = 1; step <= ContextSchedule::kSteps; ++step) {
      GaussianParams<S> p = step_params(ctx, y_hat, hyper_features, step, sched);
      Tensor<S> m = sched.mask<S>(step, latent_ch);
      Tensor<S> mu_k = mul(p.mu, m);
      Tensor<S> sg_k = mul(p.sigma, m);
      if (step == 1) {
        full.mu = mu_k;
        full.sigma = sg_k;
      } else {
        full.mu = add(full.mu, mu_k);
        full.sigma = add(full.sigma, sg_k);
      }
    }
    return full;
  }
};

namespace detail {

template <typename S>
void check_sigma_floor(const Tensor<S>& sigma) {
  const S* d = sigma.data();
  const S floor = static_cast<S>(kSigmaFloor) - static_cast<S>(1e-6);
  for (int64_t i = 0; i < sigma.size(); ++i)
    if (!(d[i] >= floor))
      throw TensorError("rate_estimate: sigma below floor at index " + std::to_string(i));
}

}  // namespace detail

// Gaussian conditional code length in bits: sum_i -log2 p_i with
// p = Phi((r + 1/2)/sigma) - Phi((r - 1/2)/sigma), r = y_hat - mu, and p
// floored at 2^-48 before the log. Differentiable w.r.t. y_hat, mu, sigma.
template <typename S>
Tensor<S> gaussian_rate_bits(const Tensor<S>& y_hat, const Tensor<S>& mu,
                             const Tensor<S>& sigma) {
  check_same_shape("rate_estimate", y_hat, mu);
  check_same_shape("rate_estimate", y_hat, sigma);
  detail::check_sigma_floor(sigma);
  constexpr double kInvSqrt2 = 0.70710678118654752440084436210485;
  constexpr double kInvLn2 = 1.4426950408889634073599246810019;
  Tensor<S> r = sub(y_hat, mu);
  Tensor<S> inv = reciprocal(mul_scalar(sigma, static_cast<S>(1.0 / kInvSqrt2)));
  Tensor<S> hi = erf(mul(add_scalar(r, S(0.5)), inv));
  Tensor<S> lo = erf(mul(add_scalar(r, S(-0.5)), inv));
  Tensor<S> p = max_scalar(mul_scalar(sub(hi, lo), S(0.5)), static_cast<S>(kProbFloor));
  return neg(mul_scalar(sum(log(p)), static_cast<S>(kInvLn2)));
}

// Univariate monotone CDF per channel (softplus-reparameterized matrices,
// bounded tanh gates, sigmoid head), the standard factorized-prior chain:
// widths 1 -> 3 -> 3 -> 1.
template <typename S>
struct FactorizedPrior {
  struct Chain {
    int h1, b1, a1, h2, b2, a2, h3, b3;
  };
  std::vector<Chain> chains;
  int channels = 0;

  FactorizedPrior() = default;
  FactorizedPrior(ParamStore<S>& ps, const std::string& prefix, int channels_, Rng& rng)
      : channels(channels_) {
    // Initial matrix values follow the usual init: softplus spreads the CDF
    // over roughly +-10 at the start of training.
    const S h_init_inner = static_cast<S>(-1.7870);
    const S h_init_last = static_cast<S>(-0.5266);
    for (int c = 0; c < channels; ++c) {
      const std::string p = prefix + ".ch" + std::to_string(c);
      Chain ch;
      ch.h1 = ps.add(p + ".h1", Tensor<S>::full({3, 1}, h_init_inner));
      ch.b1 = ps.add(p + ".b1", Tensor<S>::rand_uniform({3}, rng, S(-0.5), S(0.5)), false);
      ch.a1 = ps.add(p + ".a1", Tensor<S>({3}), false);
      ch.h2 = ps.add(p + ".h2", Tensor<S>::full({3, 3}, h_init_inner));
      ch.b2 = ps.add(p + ".b2", Tensor<S>::rand_uniform({3}, rng, S(-0.5), S(0.5)), false);
      ch.a2 = ps.add(p + ".a2", Tensor<S>({3}), false);
      ch.h3 = ps.add(p + ".h3", Tensor<S>::full({1, 3}, h_init_last));
      ch.b3 = ps.add(p + ".b3", Tensor<S>({1}), false);
      chains.push_back(ch);
    }
  }

  // CDF of channel c evaluated elementwise on a [1, n] row.
  Tensor<S> cdf(ForwardCtx<S>& ctx, int c, const Tensor<S>& x) const {
    const Chain& ch = chains.at(static_cast<size_t>(c));
    Tensor<S> u1 = row_add(matmul(softplus(ctx.p(ch.h1)), x), ctx.p(ch.b1));
    Tensor<S> t1 = add(u1, row_scale(tanh(u1), tanh(ctx.p(ch.a1))));
    Tensor<S> u2 = row_add(matmul(softplus(ctx.p(ch.h2)), t1), ctx.p(ch.b2));
    Tensor<S> t2 = add(u2, row_scale(tanh(u2), tanh(ctx.p(ch.a2))));
    Tensor<S> u3 = row_add(matmul(softplus(ctx.p(ch.h3)), t2), ctx.p(ch.b3));
    return sigmoid(u3);
  }

  // Code length in bits of z under the per-channel model,
  // sum -log2(CDF(z + 1/2) - CDF(z - 1/2)) with the 2^-48 floor.
  Tensor<S> rate_bits(ForwardCtx<S>& ctx, const Tensor<S>& z) const {
    constexpr double kInvLn2 = 1.4426950408889634073599246810019;
    const int n = static_cast<int>(z.size()) / channels;
    Tensor<S> flat = z.reshaped({channels, n});
    Tensor<S> total;
    for (int c = 0; c < channels; ++c) {
      Tensor<S> row = slice_rows(flat, c, 1);
      Tensor<S> p = sub(cdf(ctx, c, add_scalar(row, S(0.5))),
                        cdf(ctx, c, add_scalar(row, S(-0.5))));
      p = max_scalar(p, static_cast<S>(kProbFloor));
      Tensor<S> bits = neg(mul_scalar(sum(log(p)), static_cast<S>(kInvLn2)));
      total = c == 0 ? bits : add(total, bits);
    }
    return total;
  }

  // Plain double-precision CDF evaluation for coder table construction;
  // must match the tensor path's formula exactly.
  double cdf_value(const ParamStore<S>& ps, int c, double x) const {
    const Chain& ch = chains.at(static_cast<size_t>(c));
    auto sp = [](double v) { return v > 30 ? v : std::log1p(std::exp(v)); };
    const auto& h1 = ps.value(ch.h1);
    const auto& b1 = ps.value(ch.b1);
    const auto& a1 = ps.value(ch.a1);
    double t1[3];
    for (int i = 0; i < 3; ++i) {
      double u = sp(static_cast<double>(h1[i])) * x + static_cast<double>(b1[i]);
      t1[i] = u + std::tanh(static_cast<double>(a1[i])) * std::tanh(u);
    }
    const auto& h2 = ps.value(ch.h2);
    const auto& b2 = ps.value(ch.b2);
    const auto& a2 = ps.value(ch.a2);
    double t2[3];
    for (int i = 0; i < 3; ++i) {
      double u = static_cast<double>(b2[i]);
      for (int j = 0; j < 3; ++j) u += sp(static_cast<double>(h2[i * 3 + j])) * t1[j];
      t2[i] = u + std::tanh(static_cast<double>(a2[i])) * std::tanh(u);
    }
    const auto& h3 = ps.value(ch.h3);
    const auto& b3 = ps.value(ch.b3);
    double u = static_cast<double>(b3[0]);
    for (int j = 0; j < 3; ++j) u += sp(static_cast<double>(h3[j])) * t2[j];
    return 1.0 / (1.0 + std::exp(-u));
  }

  // Quantized coder table for one channel over the window [-half, half].
  CdfTable table(const ParamStore<S>& ps, int c, int half_support = 32) const {
    std::vector<double> points;
    points.reserve(static_cast<size_t>(2 * half_support + 2));
    for (int k = -half_support; k <= half_support + 1; ++k)
      points.push_back(cdf_value(ps, c, static_cast<double>(k) - 0.5));
    return quantized_cdf_table(-half_support, points);
  }
};

}  // namespace ditic
