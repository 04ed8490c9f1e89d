#pragma once

#include <vector>

#include "ditic/ops.hpp"

// Spatial ops over [C, H, W] tensors. conv2d lowers to an im2col buffer and
// a single GEMM; the column buffer is captured for the backward pass.

namespace ditic {

namespace detail {

// Symmetric (edge-inclusive) mirror index, valid for any pad size and n >= 1.
inline int mirror_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * n;
  i = ((i % period) + period) % period;
  return i < n ? i : period - 1 - i;
}

template <typename S>
Tensor<S> im2col(const Tensor<S>& x, int kh, int kw, int stride, int pad, int oh, int ow) {
  const int cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor<S> col({cin * kh * kw, oh * ow});
  const S* xs = x.data();
  S* cs = col.mutable_data();
  for (int ci = 0; ci < cin; ++ci)
    for (int i = 0; i < kh; ++i)
      for (int j = 0; j < kw; ++j) {
        S* dst = cs + static_cast<int64_t>((ci * kh + i) * kw + j) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + i;
          if (iy < 0 || iy >= h) {
            for (int ox = 0; ox < ow; ++ox) dst[oy * ow + ox] = S(0);
            continue;
          }
          const S* src = xs + static_cast<int64_t>(ci) * h * w + static_cast<int64_t>(iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + j;
            dst[oy * ow + ox] = (ix >= 0 && ix < w) ? src[ix] : S(0);
          }
        }
      }
  return col;
}

template <typename S>
void col2im_acc(const Tensor<S>& col, int cin, int h, int w, int kh, int kw, int stride, int pad,
                int oh, int ow, S* dx) {
  const S* cs = col.data();
  for (int ci = 0; ci < cin; ++ci)
    for (int i = 0; i < kh; ++i)
      for (int j = 0; j < kw; ++j) {
        const S* src = cs + static_cast<int64_t>((ci * kh + i) * kw + j) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + i;
          if (iy < 0 || iy >= h) continue;
          S* dst = dx + static_cast<int64_t>(ci) * h * w + static_cast<int64_t>(iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + j;
            if (ix >= 0 && ix < w) dst[ix] += src[oy * ow + ox];
          }
        }
      }
}

}  // namespace detail

// x: [Cin, H, W], w: [Cout, Cin*kh*kw], b: [Cout]. Zero padding.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b, int kh, int kw,
                 int stride, int pad) {
  if (x.rank() != 3 || w.rank() != 2 || b.rank() != 1)
    throw TensorError("conv2d: bad ranks " + shape_str(x.shape()) + ", " + shape_str(w.shape()));
  const int cin = x.dim(0), h = x.dim(1), ww = x.dim(2);
  const int cout = w.dim(0);
  if (w.dim(1) != cin * kh * kw || b.dim(0) != cout)
    throw TensorError("conv2d: shape mismatch " + shape_str(x.shape()) + " vs " +
                      shape_str(w.shape()));
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (ww + 2 * pad - kw) / stride + 1;
  Tensor<S> col = detail::im2col(x, kh, kw, stride, pad, oh, ow);
  Tensor<S> out({cout, oh, ow});
  EMap<S>(out.mutable_data(), cout, oh * ow).noalias() =
      ECMap<S>(w.data(), cout, cin * kh * kw) * ECMap<S>(col.data(), cin * kh * kw, oh * ow);
  {
    S* os = out.mutable_data();
    const S* bs = b.data();
    for (int c = 0; c < cout; ++c)
      for (int p = 0; p < oh * ow; ++p) os[c * oh * ow + p] += bs[c];
  }
  Tape<S>* tp = detail::tape_of(x, w, b);
  if (!tp) return out;
  return tp->record(
      "conv2d", {x.node(), w.node(), b.node()}, std::move(out),
      [x, w, b, col, kh, kw, stride, pad, oh, ow, cin, cout, h, ww](Tape<S>& t, int self) {
        const Tensor<S>& g = t.grad_ref(self);
        ECMap<S> G(g.data(), cout, oh * ow);
        if (b.node() >= 0) {
          Tensor<S>& gb = t.grad_acc(b.node(), b.shape());
          S* d = gb.mutable_data();
          const S* gs = g.data();
          for (int c = 0; c < cout; ++c) {
            S acc = S(0);
            for (int p = 0; p < oh * ow; ++p) acc += gs[c * oh * ow + p];
            d[c] += acc;
          }
        }
        if (w.node() >= 0) {
          Tensor<S>& gw = t.grad_acc(w.node(), w.shape());
          EMap<S>(gw.mutable_data(), cout, cin * kh * kw).noalias() +=
              G * ECMap<S>(col.data(), cin * kh * kw, oh * ow).transpose();
        }
        if (x.node() >= 0) {
          Tensor<S> dcol({cin * kh * kw, oh * ow});
          EMap<S>(dcol.mutable_data(), cin * kh * kw, oh * ow).noalias() =
              ECMap<S>(w.data(), cout, cin * kh * kw).transpose() * G;
          Tensor<S>& gx = t.grad_acc(x.node(), x.shape());
          detail::col2im_acc(dcol, cin, h, ww, kh, kw, stride, pad, oh, ow, gx.mutable_data());
        }
      });
}

// Depthwise conv, stride 1. x: [C, H, W], w: [C, kh*kw], b: [C].
template <typename S>
Tensor<S> depthwise_conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b, int kh,
                           int kw, int pad) {
  if (x.rank() != 3 || w.rank() != 2 || w.dim(0) != x.dim(0) || w.dim(1) != kh * kw ||
      b.dim(0) != x.dim(0))
    throw TensorError("depthwise_conv2d: shape mismatch " + shape_str(x.shape()) + " vs " +
                      shape_str(w.shape()));
  const int c = x.dim(0), h = x.dim(1), ww = x.dim(2);
  Tensor<S> out({c, h, ww});
  const S* xs = x.data();
  const S* ws = w.data();
  const S* bs = b.data();
  S* os = out.mutable_data();
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < ww; ++xx) {
        S acc = bs[ci];
        for (int i = 0; i < kh; ++i) {
          const int iy = y - pad + i;
          if (iy < 0 || iy >= h) continue;
          for (int j = 0; j < kw; ++j) {
            const int ix = xx - pad + j;
            if (ix < 0 || ix >= ww) continue;
            acc += ws[ci * kh * kw + i * kw + j] * xs[(ci * h + iy) * ww + ix];
          }
        }
        os[(ci * h + y) * ww + xx] = acc;
      }
  Tape<S>* tp = detail::tape_of(x, w, b);
  if (!tp) return out;
  return tp->record(
      "depthwise_conv2d", {x.node(), w.node(), b.node()}, std::move(out),
      [x, w, b, kh, kw, pad, c, h, ww](Tape<S>& t, int self) {
        const Tensor<S>& g = t.grad_ref(self);
        const S* gs = g.data();
        const S* xs = x.data();
        const S* ws = w.data();
        if (b.node() >= 0) {
          Tensor<S>& gb = t.grad_acc(b.node(), b.shape());
          S* d = gb.mutable_data();
          for (int ci = 0; ci < c; ++ci) {
            S acc = S(0);
            for (int p = 0; p < h * ww; ++p) acc += gs[ci * h * ww + p];
            d[ci] += acc;
          }
        }
        if (w.node() >= 0) {
          Tensor<S>& gw = t.grad_acc(w.node(), w.shape());
          S* d = gw.mutable_data();
          for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < h; ++y)
              for (int xx = 0; xx < ww; ++xx) {
                const S gv = gs[(ci * h + y) * ww + xx];
                for (int i = 0; i < kh; ++i) {
                  const int iy = y - pad + i;
                  if (iy < 0 || iy >= h) continue;
                  for (int j = 0; j < kw; ++j) {
                    const int ix = xx - pad + j;
                    if (ix < 0 || ix >= ww) continue;
                    d[ci * kh * kw + i * kw + j] += gv * xs[(ci * h + iy) * ww + ix];
                  }
                }
              }
        }
        if (x.node() >= 0) {
          Tensor<S>& gx = t.grad_acc(x.node(), x.shape());
          S* d = gx.mutable_data();
          for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < h; ++y)
              for (int xx = 0; xx < ww; ++xx) {
                const S gv = gs[(ci * h + y) * ww + xx];
                for (int i = 0; i < kh; ++i) {
                  const int iy = y - pad + i;
                  if (iy < 0 || iy >= h) continue;
                  for (int j = 0; j < kw; ++j) {
                    const int ix = xx - pad + j;
                    if (ix < 0 || ix >= ww) continue;
                    d[(ci * h + iy) * ww + ix] += gv * ws[ci * kh * kw + i * kw + j];
                  }
                }
              }
        }
      });
}

template <typename S>
Tensor<S> upsample_nearest2x(const Tensor<S>& x) {
  if (x.rank() != 3) throw TensorError("upsample_nearest2x: rank != 3");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor<S> out({c, 2 * h, 2 * w});
  const S* xs = x.data();
  S* os = out.mutable_data();
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < 2 * h; ++y)
      for (int xx = 0; xx < 2 * w; ++xx)
        os[(ci * 2 * h + y) * 2 * w + xx] = xs[(ci * h + y / 2) * w + xx / 2];
  Tape<S>* tp = x.tape();
  if (!tp) return out;
  return tp->record("upsample_nearest2x", {x.node()}, std::move(out),
                    [x, c, h, w](Tape<S>& t, int self) {
                      const Tensor<S>& g = t.grad_ref(self);
                      Tensor<S>& gx = t.grad_acc(x.node(), x.shape());
                      const S* gs = g.data();
                      S* d = gx.mutable_data();
                      for (int ci = 0; ci < c; ++ci)
                        for (int y = 0; y < 2 * h; ++y)
                          for (int xx = 0; xx < 2 * w; ++xx)
                            d[(ci * h + y / 2) * w + xx / 2] += gs[(ci * 2 * h + y) * 2 * w + xx];
                    });
}

// Symmetric-reflection padding; valid for any pad size including inputs of
// extent 1 (the mirror wraps).
template <typename S>
Tensor<S> reflect_pad(const Tensor<S>& x, int top, int bottom, int left, int right) {
  if (x.rank() != 3) throw TensorError("reflect_pad: rank != 3");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int oh = h + top + bottom, ow = w + left + right;
  Tensor<S> out({c, oh, ow});
  const S* xs = x.data();
  S* os = out.mutable_data();
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < oh; ++y) {
      const int sy = detail::mirror_index(y - top, h);
      for (int xx = 0; xx < ow; ++xx) {
        const int sx = detail::mirror_index(xx - left, w);
        os[(ci * oh + y) * ow + xx] = xs[(ci * h + sy) * w + sx];
      }
    }
  Tape<S>* tp = x.tape();
  if (!tp) return out;
  return tp->record("reflect_pad", {x.node()}, std::move(out),
                    [x, top, left, c, h, w, oh, ow](Tape<S>& t, int self) {
                      const Tensor<S>& g = t.grad_ref(self);
                      Tensor<S>& gx = t.grad_acc(x.node(), x.shape());
                      const S* gs = g.data();
                      S* d = gx.mutable_data();
                      for (int ci = 0; ci < c; ++ci)
                        for (int y = 0; y < oh; ++y) {
                          const int sy = detail::mirror_index(y - top, h);
                          for (int xx = 0; xx < ow; ++xx) {
                            const int sx = detail::mirror_index(xx - left, w);
                            d[(ci * h + sy) * w + sx] += gs[(ci * oh + y) * ow + xx];
                          }
                        }
                    });
}

template <typename S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2))
    throw TensorError("concat_channels: shape mismatch " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
  const int h = a.dim(1), w = a.dim(2);
  Tensor<S> out = concat_rows<S>(
      {a.reshaped({a.dim(0), h * w}), b.reshaped({b.dim(0), h * w})});
  return out.reshaped({a.dim(0) + b.dim(0), h, w});
}

template <typename S>
Tensor<S> crop2d(const Tensor<S>& x, int top, int left, int height, int width) {
  if (x.rank() != 3 || top < 0 || left < 0 || top + height > x.dim(1) || left + width > x.dim(2))
    throw TensorError("crop2d: bad region on " + shape_str(x.shape()));
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor<S> out({c, height, width});
  const S* xs = x.data();
  S* os = out.mutable_data();
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < height; ++y)
      std::copy(xs + (static_cast<int64_t>(ci) * h + top + y) * w + left,
                xs + (static_cast<int64_t>(ci) * h + top + y) * w + left + width,
                os + (static_cast<int64_t>(ci) * height + y) * width);
  Tape<S>* tp = x.tape();
  if (!tp) return out;
  return tp->record("crop2d", {x.node()}, std::move(out),
                    [x, top, left, height, width, c, h, w](Tape<S>& t, int self) {
                      const Tensor<S>& g = t.grad_ref(self);
                      Tensor<S>& gx = t.grad_acc(x.node(), x.shape());
                      const S* gs = g.data();
                      S* d = gx.mutable_data();
                      for (int ci = 0; ci < c; ++ci)
                        for (int y = 0; y < height; ++y)
                          for (int xx = 0; xx < width; ++xx)
                            d[(ci * h + top + y) * w + left + xx] +=
                                gs[(ci * height + y) * width + xx];
                    });
}

}  // namespace ditic
