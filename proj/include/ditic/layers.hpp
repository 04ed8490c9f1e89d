#pragma once

#include <string>

#include "ditic/conv.hpp"
#include "ditic/params.hpp"

namespace ditic {

// Thin parameter-owning wrappers. Construction registers named tensors in
// the store; forward binds them through a ForwardCtx so freezing and LoRA
// apply uniformly.

template <typename S>
struct Linear {
  int w = -1, b = -1;
  int d_in = 0, d_out = 0;

  Linear() = default;
  Linear(ParamStore<S>& ps, const std::string& prefix, int in, int out, Rng& rng,
         bool zero_init = false)
      : d_in(in), d_out(out) {
    Tensor<S> wt = zero_init ? Tensor<S>({out, in}) : kaiming_init<S>({out, in}, in, rng);
    w = ps.add(prefix + ".w", std::move(wt));
    b = ps.add(prefix + ".b", Tensor<S>({out}), /*decay=*/false);
  }

  // x: [L, d_in] -> [L, d_out]; weight stored [d_out, d_in].
  Tensor<S> forward(ForwardCtx<S>& ctx, const Tensor<S>& x) const {
    return bias_add(matmul(x, transpose2d(ctx.p(w))), ctx.p(b));
  }
};

template <typename S>
struct Conv2dLayer {
  int w = -1, b = -1;
  int cin = 0, cout = 0, k = 1, stride = 1, pad = 0;

  Conv2dLayer() = default;
  Conv2dLayer(ParamStore<S>& ps, const std::string& prefix, int cin_, int cout_, int k_,
              int stride_, Rng& rng, bool zero_init = false)
      : cin(cin_), cout(cout_), k(k_), stride(stride_), pad(k_ / 2) {
    const int fan_in = cin * k * k;
    Tensor<S> wt = zero_init ? Tensor<S>({cout, fan_in}) : kaiming_init<S>({cout, fan_in}, fan_in, rng);
    w = ps.add(prefix + ".w", std::move(wt));
    b = ps.add(prefix + ".b", Tensor<S>({cout}), /*decay=*/false);
  }

  Tensor<S> forward(ForwardCtx<S>& ctx, const Tensor<S>& x) const {
    if (k == 1 && stride == 1) {
      // 1x1 conv as a single GEMM over [C, HW].
      const int h = x.dim(1), wd = x.dim(2);
      Tensor<S> flat = x.reshaped({cin, h * wd});
      Tensor<S> out = row_add(matmul(ctx.p(w), flat), ctx.p(b));
      return out.reshaped({cout, h, wd});
    }
    return conv2d(x, ctx.p(w), ctx.p(b), k, k, stride, pad);
  }
};

template <typename S>
struct DepthwiseLayer {
  int w = -1, b = -1;
  int c = 0, k = 3, pad = 1;

  DepthwiseLayer() = default;
  DepthwiseLayer(ParamStore<S>& ps, const std::string& prefix, int c_, int k_, Rng& rng)
      : c(c_), k(k_), pad(k_ / 2) {
    w = ps.add(prefix + ".w", kaiming_init<S>({c, k * k}, k * k, rng));
    b = ps.add(prefix + ".b", Tensor<S>({c}), /*decay=*/false);
  }

  Tensor<S> forward(ForwardCtx<S>& ctx, const Tensor<S>& x) const {
    return depthwise_conv2d(x, ctx.p(w), ctx.p(b), k, k, pad);
  }
};

// Depthwise 3x3 + pointwise expand/GELU/project with a residual connection.
template <typename S>
struct DepthConvBlock {
  DepthwiseLayer<S> dw;
  Conv2dLayer<S> pw1, pw2;

  DepthConvBlock() = default;
  DepthConvBlock(ParamStore<S>& ps, const std::string& prefix, int c, Rng& rng)
      : dw(ps, prefix + ".dw", c, 3, rng),
        pw1(ps, prefix + ".pw1", c, 2 * c, 1, 1, rng),
        pw2(ps, prefix + ".pw2", 2 * c, c, 1, 1, rng) {}

  Tensor<S> forward(ForwardCtx<S>& ctx, const Tensor<S>& x) const {
    Tensor<S> h = dw.forward(ctx, x);
    h = pw2.forward(ctx, gelu(pw1.forward(ctx, h)));
    return add(x, h);
  }
};

template <typename S>
struct LayerNormLayer {
  int g = -1, b = -1;
  int dim = 0;

  LayerNormLayer() = default;
  LayerNormLayer(ParamStore<S>& ps, const std::string& prefix, int dim_) : dim(dim_) {
    g = ps.add(prefix + ".g", Tensor<S>::full({dim}, S(1)), /*decay=*/false);
    b = ps.add(prefix + ".b", Tensor<S>({dim}), /*decay=*/false);
  }

  Tensor<S> forward(ForwardCtx<S>& ctx, const Tensor<S>& x) const {
    return layernorm_rows(x, ctx.p(g), ctx.p(b));
  }
};

}  // namespace ditic
