#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ditic/ops.hpp"

namespace ditic {

// Flat named parameter registry. Layers hold integer handles; the trainer,
// checkpoint I/O, freeze rules and LoRA all address parameters by name
// prefix. Values are mutated only through the optimizer path.
template <typename S>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<S> value;
    bool trainable = true;
    bool decay = true;  // weight decay applies (weights yes, biases/norms no)
  };

  int add(const std::string& name, Tensor<S> init, bool decay = true) {
    if (index_.count(name)) throw TensorError("param store: duplicate name " + name);
    index_[name] = static_cast<int>(entries_.size());
    entries_.push_back(Entry{name, std::move(init), true, decay});
    return static_cast<int>(entries_.size()) - 1;
  }

  int find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? -1 : it->second;
  }

  Entry& entry(int h) { return entries_.at(static_cast<size_t>(h)); }
  const Entry& entry(int h) const { return entries_.at(static_cast<size_t>(h)); }
  const Tensor<S>& value(int h) const { return entries_.at(static_cast<size_t>(h)).value; }
  void set_value(int h, Tensor<S> v) {
    check_same_shape("param set_value", entries_.at(static_cast<size_t>(h)).value, v);
    entries_[static_cast<size_t>(h)].value = std::move(v).detached();
  }

  size_t size() const { return entries_.size(); }
  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  void set_trainable_prefix(const std::string& prefix, bool trainable) {
    for (auto& e : entries_)
      if (e.name.rfind(prefix, 0) == 0) e.trainable = trainable;
  }

  int64_t total_elements() const {
    int64_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, int> index_;
};

// Low-rank adapter over a [d_out, d_in] weight: W_eff = W + (alpha/r) * B*A.
// B starts at zero so the adapted layer equals the base layer at attach time.
struct LoraSlot {
  int base = -1;
  int a = -1;
  int b = -1;
  double scale = 0.0;
};

// Per-forward binding of parameters to a tape. Each trainable parameter is
// leafed at most once per context; frozen parameters pass through as
// constants, and LoRA-adapted weights are materialized as base + delta.
template <typename S>
class ForwardCtx {
 public:
  ForwardCtx(ParamStore<S>& store, Tape<S>* tape) : store_(&store), tape_(tape) {}

  Tape<S>* tape() const { return tape_; }
  ParamStore<S>& store() { return *store_; }

  void attach_lora(const LoraSlot& slot) { lora_[slot.base] = slot; }

  Tensor<S> p(int handle) {
    auto it = cache_.find(handle);
    if (it != cache_.end()) return it->second;
    Tensor<S> bound = raw(handle);
    auto lit = lora_.find(handle);
    if (lit != lora_.end()) {
      const LoraSlot& s = lit->second;
      Tensor<S> delta = matmul(raw(s.b), raw(s.a));
      delta = mul_scalar(delta, static_cast<S>(s.scale));
      bound = add(bound, delta.reshaped(bound.shape()));
    }
    cache_.emplace(handle, bound);
    return bound;
  }

  // Gradient of a parameter after backward; zeros when the parameter is
  // frozen or never used. LoRA-adapted bases report through their own leaf,
  // so a frozen base stays at zero while A/B receive gradients.
  Tensor<S> grad(int handle) const {
    auto rit = raw_cache_.find(handle);
    if (rit == raw_cache_.end() || !rit->second.on_tape())
      return Tensor<S>(store_->value(handle).shape());
    return tape_->grad(rit->second);
  }

  // Gradients of every trainable parameter touched by this context.
  std::unordered_map<int, Tensor<S>> collect_grads() const {
    std::unordered_map<int, Tensor<S>> out;
    for (const auto& [h, t] : raw_cache_)
      if (t.on_tape()) out.emplace(h, tape_->grad(t));
    return out;
  }

 private:
  Tensor<S> raw(int handle) {
    auto it = raw_cache_.find(handle);
    if (it != raw_cache_.end()) return it->second;
    const auto& e = store_->entry(handle);
    Tensor<S> t = (tape_ && e.trainable) ? tape_->leaf(e.value) : e.value;
    raw_cache_.emplace(handle, t);
    return t;
  }

  ParamStore<S>* store_;
  Tape<S>* tape_;
  std::unordered_map<int, Tensor<S>> cache_;
  std::unordered_map<int, Tensor<S>> raw_cache_;
  std::unordered_map<int, LoraSlot> lora_;
};

// ---- initializers ----

template <typename S>
Tensor<S> kaiming_init(Shape shape, int fan_in, Rng& rng) {
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  return Tensor<S>::randn(std::move(shape), rng, static_cast<S>(std));
}

template <typename S>
Tensor<S> xavier_init(Shape shape, int fan_in, int fan_out, Rng& rng) {
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
  return Tensor<S>::randn(std::move(shape), rng, static_cast<S>(std));
}

}  // namespace ditic
