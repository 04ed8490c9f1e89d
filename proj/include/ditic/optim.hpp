#pragma once

#include <map>
#include <unordered_map>

#include "ditic/params.hpp"

namespace ditic {

struct LrSchedule {
  double lr0 = 1e-4;
  std::vector<double> points{0.5, 0.8, 0.9};  // fractions of total iterations
  double factor = 0.5;
};

// Piecewise-constant schedule: the base rate halves at each declared
// fraction of the run.
inline double lr_schedule(int64_t iter, int64_t total, const LrSchedule& s = {}) {
  double lr = s.lr0;
  const double frac = total > 0 ? static_cast<double>(iter) / static_cast<double>(total) : 0.0;
  for (double p : s.points)
    if (frac >= p) lr *= s.factor;
  return lr;
}

struct OptimConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;  // decoupled, weights only
};

template <typename S>
class AdamW {
 public:
  explicit AdamW(OptimConfig cfg = {}) : cfg_(cfg) {}

  void step(ParamStore<S>& store, const std::unordered_map<int, Tensor<S>>& grads, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (const auto& [h, g] : grads) {
      auto& e = store.entry(h);
      if (!e.trainable) continue;
      check_same_shape("adamw", e.value, g);
      auto& st = states_[h];
      if (!st.m.defined()) {
        st.m = Tensor<S>(g.shape());
        st.v = Tensor<S>(g.shape());
      }
      S* m = st.m.mutable_data();
      S* v = st.v.mutable_data();
      S* p = e.value.mutable_data();
      const S* gd = g.data();
      const double wd = e.decay ? cfg_.weight_decay : 0.0;
      for (int64_t i = 0; i < g.size(); ++i) {
        const double gi = static_cast<double>(gd[i]);
        const double mi = cfg_.beta1 * static_cast<double>(m[i]) + (1.0 - cfg_.beta1) * gi;
        const double vi = cfg_.beta2 * static_cast<double>(v[i]) + (1.0 - cfg_.beta2) * gi * gi;
        m[i] = static_cast<S>(mi);
        v[i] = static_cast<S>(vi);
        const double mhat = mi / bc1;
        const double vhat = vi / bc2;
        double update = mhat / (std::sqrt(vhat) + cfg_.eps) + wd * static_cast<double>(p[i]);
        p[i] = static_cast<S>(static_cast<double>(p[i]) - lr * update);
      }
    }
  }

  void reset() {
    states_.clear();
    t_ = 0;
  }

 private:
  struct State {
    Tensor<S> m, v;
  };
  std::unordered_map<int, State> states_;
  int64_t t_ = 0;
  OptimConfig cfg_;
};

// EMA of the trainable parameters: shadow <- decay*shadow + (1-decay)*live.
// Frozen parameters track the live value exactly (no arithmetic), so frozen
// records stay byte-identical.
template <typename S>
class EmaShadow {
 public:
  void init_from(const ParamStore<S>& store) {
    shadow_.clear();
    for (const auto& e : store.entries()) shadow_[e.name] = e.value.clone();
  }

  void update(const ParamStore<S>& store, double decay) {
    for (const auto& e : store.entries()) {
      auto it = shadow_.find(e.name);
      if (it == shadow_.end())
        throw TensorError("ema_update: parameter tree mismatch at " + e.name);
      check_same_shape("ema_update", it->second, e.value);
      if (!e.trainable) {
        it->second = e.value.clone();
        continue;
      }
      // shadow += (1 - decay) * (live - shadow): algebraically the EMA, and
      // an exact fixed point when shadow == live.
      S* s = it->second.mutable_data();
      const S* l = e.value.data();
      for (int64_t i = 0; i < e.value.size(); ++i)
        s[i] = static_cast<S>(static_cast<double>(s[i]) +
                              (1.0 - decay) * (static_cast<double>(l[i]) -
                                               static_cast<double>(s[i])));
    }
    if (shadow_.size() != store.size())
      throw TensorError("ema_update: parameter tree mismatch (extra shadow entries)");
  }

  const std::map<std::string, Tensor<S>>& values() const { return shadow_; }
  bool initialized() const { return !shadow_.empty(); }

 private:
  std::map<std::string, Tensor<S>> shadow_;
};

// Attaches a low-rank adapter to a [d_out, d_in] weight: A ~ N(0, 1/sqrt(d_in))
// with shape [r, d_in], B zero with shape [d_out, r], scale alpha/r (alpha
// defaults to r). The base weight is frozen at attach time.
template <typename S>
LoraSlot lora_attach(ParamStore<S>& store, const std::string& base_name, int rank, Rng& rng,
                     double alpha = -1.0) {
  if (rank < 1) throw TensorError("lora_attach: rank must be >= 1");
  const int base = store.find(base_name);
  if (base < 0) throw TensorError("lora_attach: no parameter named " + base_name);
  const auto& w = store.value(base);
  if (w.rank() != 2) throw TensorError("lora_attach: base must be a matrix: " + base_name);
  const int d_out = w.dim(0), d_in = w.dim(1);
  if (rank > std::min(d_in, d_out))
    throw TensorError("lora_attach: rank exceeds min(d_in, d_out) for " + base_name);
  LoraSlot slot;
  slot.base = base;
  slot.a = store.add("lora." + base_name + ".A",
                     Tensor<S>::randn({rank, d_in}, rng,
                                      static_cast<S>(1.0 / std::sqrt(static_cast<double>(d_in)))));
  slot.b = store.add("lora." + base_name + ".B", Tensor<S>({d_out, rank}));
  slot.scale = (alpha < 0 ? static_cast<double>(rank) : alpha) / static_cast<double>(rank);
  store.entry(base).trainable = false;
  return slot;
}

}  // namespace ditic
