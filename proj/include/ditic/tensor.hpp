#pragma once

#include <cstdint>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ditic/rng.hpp"

namespace ditic {

using Shape = std::vector<int>;

class TensorError : public std::runtime_error {
 public:
  explicit TensorError(const std::string& msg) : std::runtime_error(msg) {}
};

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

template <typename S>
class Tape;

// Dense row-major tensor. Value semantics with shared storage; treated as
// immutable once built except through the explicitly named mutation hooks
// used by the optimizer and gradient accumulators.
template <typename S>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<S>>(shape_numel(shape_), S(0))) {}

  Tensor(Shape shape, std::vector<S> values) : shape_(std::move(shape)) {
    if (static_cast<int64_t>(values.size()) != shape_numel(shape_))
      throw TensorError("tensor: " + std::to_string(values.size()) +
                        " values for shape " + shape_str(shape_));
    data_ = std::make_shared<std::vector<S>>(std::move(values));
  }

  static Tensor full(Shape shape, S v) {
    Tensor t(std::move(shape));
    for (S& x : *t.data_) x = v;
    return t;
  }

  static Tensor scalar(S v) { return Tensor({1}, {v}); }

  static Tensor randn(Shape shape, Rng& rng, S stddev = S(1)) {
    Tensor t(std::move(shape));
    for (S& x : *t.data_) x = static_cast<S>(rng.normal()) * stddev;
    return t;
  }

  static Tensor rand_uniform(Shape shape, Rng& rng, S lo, S hi) {
    Tensor t(std::move(shape));
    for (S& x : *t.data_) x = static_cast<S>(rng.uniform(lo, hi));
    return t;
  }

  const Shape& shape() const { return shape_; }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t size() const { return data_ ? static_cast<int64_t>(data_->size()) : 0; }
  bool defined() const { return data_ != nullptr; }

  const S* data() const { return data_->data(); }
  S operator[](int64_t i) const { return (*data_)[static_cast<size_t>(i)]; }

  S item() const {
    if (size() != 1) throw TensorError("item: tensor has " + std::to_string(size()) + " elements");
    return (*data_)[0];
  }

  // Explicit mutation hooks (optimizer / accumulator use only).
  S* mutable_data() { return data_->data(); }

  // Same storage, new shape.
  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != size())
      throw TensorError("reshape: " + shape_str(shape_) + " -> " + shape_str(shape));
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

  Tensor detached() const {
    Tensor t = *this;
    t.tape_ = nullptr;
    t.node_ = -1;
    return t;
  }

  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = std::make_shared<std::vector<S>>(*data_);
    return t;
  }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> t{shape_};
    T* out = t.mutable_data();
    const S* in = data();
    for (int64_t i = 0; i < size(); ++i) out[i] = static_cast<T>(in[i]);
    return t;
  }

  bool finite() const {
    for (const S& x : *data_)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  Tape<S>* tape() const { return tape_; }
  int node() const { return node_; }
  bool on_tape() const { return tape_ != nullptr; }

  Tensor with_tape(Tape<S>* tape, int node) const {
    Tensor t = *this;
    t.tape_ = tape;
    t.node_ = node;
    return t;
  }

 private:
  Shape shape_;
  std::shared_ptr<std::vector<S>> data_;
  Tape<S>* tape_ = nullptr;
  int node_ = -1;
};

template <typename S>
inline void check_same_shape(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape())
    throw TensorError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
}

template <typename S>
inline void check_finite(const char* op, const Tensor<S>& x) {
  if (!x.finite()) throw TensorError(std::string(op) + ": non-finite input");
}

}  // namespace ditic
