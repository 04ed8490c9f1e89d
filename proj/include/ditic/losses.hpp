#pragma once

#include <string>

#include "ditic/dit.hpp"

namespace ditic {

struct AlignConfig {
  double margin = 0.1;       // m in the distillation hinge
  double tau = 0.07;         // contrastive temperature
  double lambda1 = 1.0;      // MSE weight
  double lambda2 = 0.0;      // perceptual slot (out of scope, kept for shape)
  double lambda3 = 0.0;      // edge-similarity proxy weight
  double lambda4 = 1.0;      // distillation weight
  double lambda5 = 0.1;      // contrastive weight
  bool symmetric_contrastive = false;

  void validate() const {
    if (!(tau > 0)) throw TensorError("align config: tau must be positive");
    if (!(margin >= 0 && margin < 1)) throw TensorError("align config: margin not in [0, 1)");
  }
};

// Per-step loss record. total must equal
// lambda * rate_bits + distortion + lambda4 * distill + lambda5 * cond.
struct LossBreakdown {
  double rate_bits = 0;  // rate term in bits per pixel
  double distortion = 0;
  double distill = 0;
  double cond = 0;
  double total = 0;
  double lambda = 0, lambda4 = 0, lambda5 = 0;
};

// Marginal cosine alignment: max(0, 1 - m - cos(y_pred, y_ref)) on flattened
// tensors. y_ref is detached, so gradient reaches y_pred only.
template <typename S>
Tensor<S> distill_loss(const Tensor<S>& y_pred, const Tensor<S>& y_ref, S m) {
  check_same_shape("distill_loss", y_pred, y_ref);
  Tensor<S> a = y_pred;
  Tensor<S> b = stop_gradient(y_ref);
  double na2 = 0, nb2 = 0;
  for (int64_t i = 0; i < a.size(); ++i) {
    na2 += static_cast<double>(a[i]) * a[i];
    nb2 += static_cast<double>(b[i]) * b[i];
  }
  if (na2 == 0 || nb2 == 0) throw TensorError("distill_loss: zero-norm input");
  Tensor<S> norm_a = sqrt(dot_all(a, a));  // differentiable
  Tensor<S> norm_b = Tensor<S>::scalar(static_cast<S>(std::sqrt(nb2)));
  Tensor<S> cosv = div(dot_all(a, b), mul(norm_a, norm_b));
  Tensor<S> loss = add_scalar(neg(cosv), S(1) - m);
  return max_scalar(loss, S(0));
}

// CLIP-style contrastive co-alignment. Rows of both batches are unit
// vectors; the loss is the mean over i of -log softmax_j(<lat_i, text_j>/tau)
// at j = i, optionally symmetrized.
template <typename S>
Tensor<S> contrastive_loss(const Tensor<S>& c_lat, const Tensor<S>& c_text, S tau,
                           bool symmetric = false) {
  if (c_lat.rank() != 2 || c_text.rank() != 2)
    throw TensorError("contrastive_loss: inputs must be [N, d]");
  check_same_shape("contrastive_loss", c_lat, c_text);
  const int n = c_lat.dim(0);
  if (n == 0) throw TensorError("contrastive_loss: empty batch");
  if (!(tau > S(0))) throw TensorError("contrastive_loss: tau must be positive");
  Tensor<S> eye({n, n});
  for (int i = 0; i < n; ++i) eye.mutable_data()[i * n + i] = S(1);
  auto direction = [&](const Tensor<S>& a, const Tensor<S>& b) {
    Tensor<S> logits = mul_scalar(matmul(a, transpose2d(b)), S(1) / tau);
    Tensor<S> lsm = log(softmax_rows(logits));
    return neg(mul_scalar(sum(mul(lsm, eye)), S(1) / static_cast<S>(n)));
  };
  Tensor<S> loss = direction(c_lat, c_text);
  if (!symmetric) return loss;
  return mul_scalar(add(loss, direction(c_text, c_lat)), S(0.5));
}

// Deterministic stand-in for VLM caption embeddings: the caption key seeds a
// pseudo-random unit vector, so identical keys collide exactly and distinct
// keys are near-orthogonal in expectation.
template <typename S>
ConditionEmbedding<S> text_embed_provider(const std::string& caption_key, int d_c) {
  Rng rng(hash64(caption_key.data(), caption_key.size()));
  Tensor<S> e({1, d_c});
  S* d = e.mutable_data();
  double norm2 = 0;
  for (int i = 0; i < d_c; ++i) {
    const double v = rng.normal();
    d[i] = static_cast<S>(v);
    norm2 += v * v;
  }
  const S inv = static_cast<S>(1.0 / std::sqrt(norm2));
  for (int i = 0; i < d_c; ++i) d[i] *= inv;
  return ConditionEmbedding<S>{e, ConditionEmbedding<S>::Source::kText};
}

}  // namespace ditic
