#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "tabor/common.hpp"
#include "tabor/tensor.hpp"

namespace tabor {

// Reverse-mode tape.  Operations on watched tensors append a backward closure
// as they execute; backward() seeds the loss gradient with 1 and replays the
// closures in reverse, which is exactly reverse topological order because the
// graph is built eagerly.
template <typename S>
class TapeT {
 public:
  TapeT() = default;
  TapeT(const TapeT&) = delete;
  TapeT& operator=(const TapeT&) = delete;

  // Marks a tensor as differentiable on this tape and gives it a zeroed
  // gradient buffer, so that an input that never reaches the loss still
  // reports an exactly-zero gradient.
  TensorT<S>& watch(TensorT<S>& t) {
    auto& rec = *t.node();
    require(rec.tape == nullptr || rec.tape == this,
            "tape: tensor is already watched by a different tape");
    rec.tape = this;
    rec.requires_grad = true;
    if (rec.grad.size() != rec.values.size()) rec.grad.assign(rec.values.size(), S(0));
    return t;
  }

  void record(std::function<void()> fn) { ops_.push_back(std::move(fn)); }

  // Accumulates d loss / d t into every watched tensor reachable from the
  // loss.  Consumes the recorded operations; gradients survive until the next
  // zero_grad().
  void backward(const TensorT<S>& loss) {
    require(loss.numel() == 1,
            "tape: backward target must be a scalar, got shape " + shape_str(loss.shape()));
    auto& rec = *loss.node();
    require(rec.tape == this && rec.requires_grad,
            "tape: backward target was not recorded on this tape");
    rec.grad.assign(1, S(1));
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    ops_.clear();
  }

  size_t size() const { return ops_.size(); }
  bool enabled() const { return enabled_; }
  void set_enabled(bool e) { enabled_ = e; }

 private:
  std::vector<std::function<void()>> ops_;
  bool enabled_ = true;
};

using Tape = TapeT<float>;

// Scoped "stop recording" switch, for evaluation passes that reuse watched
// tensors without wanting gradient bookkeeping.
template <typename S>
class NoGradGuardT {
 public:
  explicit NoGradGuardT(TapeT<S>& tape) : tape_(tape), prev_(tape.enabled()) {
    tape_.set_enabled(false);
  }
  ~NoGradGuardT() { tape_.set_enabled(prev_); }
  NoGradGuardT(const NoGradGuardT&) = delete;
  NoGradGuardT& operator=(const NoGradGuardT&) = delete;

 private:
  TapeT<S>& tape_;
  bool prev_;
};

using NoGradGuard = NoGradGuardT<float>;

}  // namespace tabor
