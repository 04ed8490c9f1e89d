#pragma once

#include <functional>

#include "ditic/ops.hpp"

namespace ditic {

struct GradCheckReport {
  double max_rel_err = 0.0;
  int64_t worst_index = -1;
  // A hard (non-straight-through) round executed somewhere inside f; its
  // derivative is zero almost everywhere and the comparison is unreliable.
  bool nondiff_node = false;
};

// Central-difference check of the reverse-mode gradient of a scalar-valued
// function. f must be deterministic; it receives x either as a tape leaf
// (gradient pass) or as a plain tensor (difference passes).
template <typename S>
GradCheckReport finite_diff_gradcheck(const std::function<Tensor<S>(const Tensor<S>&)>& f,
                                      const Tensor<S>& x, S eps) {
  if (!(eps > S(0))) throw TensorError("finite_diff_gradcheck: eps must be positive");
  Tape<S> tape;
  Tensor<S> leaf = tape.leaf(x);
  Tensor<S> loss = f(leaf);
  if (loss.size() != 1) throw TensorError("finite_diff_gradcheck: f must return a scalar");
  tape.backward(loss);
  Tensor<S> ad = tape.grad(leaf);

  GradCheckReport report;
  report.nondiff_node = tape.saw_hard_round();

  Tensor<S> probe = x.clone();
  S* ps = probe.mutable_data();
  for (int64_t i = 0; i < x.size(); ++i) {
    const S saved = ps[i];
    ps[i] = saved + eps;
    const S fp = f(probe).item();
    ps[i] = saved - eps;
    const S fm = f(probe).item();
    ps[i] = saved;
    if (!std::isfinite(static_cast<double>(fp)) || !std::isfinite(static_cast<double>(fm)))
      throw TensorError("finite_diff_gradcheck: non-finite value at input index " +
                        std::to_string(i));
    const double fd = (static_cast<double>(fp) - static_cast<double>(fm)) /
                      (2.0 * static_cast<double>(eps));
    const double a = static_cast<double>(ad[i]);
    const double denom = std::max({std::fabs(a), std::fabs(fd), 1e-6});
    const double rel = std::fabs(a - fd) / denom;
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_index = i;
    }
  }
  return report;
}

}  // namespace ditic
