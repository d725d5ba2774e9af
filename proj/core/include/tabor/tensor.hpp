#pragma once

#include <cstdint>
#include <memory>
#include <numeric>
#include <vector>

#include "tabor/common.hpp"

namespace tabor {

template <typename S>
class TapeT;

// Dense row-major tensor with shared storage.  Copying a TensorT copies a
// handle, not the data; detach() or clone-like helpers make real copies.
// Rank 0 (empty shape) is a scalar holding exactly one element.
template <typename S>
class TensorT {
 public:
  using scalar_type = S;

  struct Rec {
    std::vector<int> shape;
    std::vector<S> values;
    std::vector<S> grad;  // empty until a tape needs it
    bool requires_grad = false;
    TapeT<S>* tape = nullptr;
  };

  TensorT() = default;

  explicit TensorT(std::vector<int> shape) : rec_(std::make_shared<Rec>()) {
    rec_->shape = std::move(shape);
    rec_->values.assign(count(rec_->shape), S(0));
  }

  TensorT(std::vector<int> shape, std::vector<S> values) : rec_(std::make_shared<Rec>()) {
    require(count(shape) == static_cast<int64_t>(values.size()),
            "tensor: " + std::to_string(values.size()) + " values do not fill shape " +
                shape_str(shape));
    rec_->shape = std::move(shape);
    rec_->values = std::move(values);
  }

  static TensorT scalar(S v) { return TensorT({}, {v}); }

  static TensorT full(std::vector<int> shape, S v) {
    TensorT t(std::move(shape));
    for (S& x : t.rec_->values) x = v;
    return t;
  }

  bool defined() const { return rec_ != nullptr; }

  const std::vector<int>& shape() const { return checked()->shape; }
  int rank() const { return static_cast<int>(checked()->shape.size()); }
  int dim(int i) const { return checked()->shape.at(static_cast<size_t>(i)); }
  int64_t numel() const { return static_cast<int64_t>(checked()->values.size()); }

  const std::vector<S>& values() const { return checked()->values; }
  std::vector<S>& values() { return checked()->values; }

  S item() const {
    require(numel() == 1, "tensor: item() called on non-scalar of shape " + shape_str(shape()));
    return rec_->values[0];
  }

  bool requires_grad() const { return defined() && rec_->requires_grad; }

  // Gradient of the most recent backward pass.  Watched tensors always have a
  // buffer (all zeros until something flows into them).
  const std::vector<S>& grad() const {
    require(defined() && !rec_->grad.empty(),
            "tensor: gradient requested but none has been computed");
    return rec_->grad;
  }

  void zero_grad() {
    auto* r = checked();
    if (r->grad.empty()) r->grad.assign(r->values.size(), S(0));
    else std::fill(r->grad.begin(), r->grad.end(), S(0));
  }

  // Value copy with no tape affiliation.
  TensorT detach() const { return TensorT(checked()->shape, checked()->values); }

  const std::shared_ptr<Rec>& node() const {
    require(defined(), "tensor: use of default-constructed tensor");
    return rec_;
  }

  static int64_t count(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
      require(d > 0, "tensor: non-positive dimension in shape " + shape_str(shape));
      n *= d;
    }
    return n;
  }

 private:
  Rec* checked() const {
    require(defined(), "tensor: use of default-constructed tensor");
    return rec_.get();
  }

  std::shared_ptr<Rec> rec_;
};

using Tensor = TensorT<float>;

}  // namespace tabor
