#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

#include "tabor/common.hpp"
#include "tabor/tape.hpp"
#include "tabor/tensor.hpp"

// Differentiable primitives.  Every op validates shapes up front (the error
// names the op and the offending shapes), refuses to emit non-finite values,
// and registers its backward closure when any input is watched by a tape.

namespace tabor {
namespace detail {

template <typename S>
using RecPtr = std::shared_ptr<typename TensorT<S>::Rec>;

template <typename S>
void check_finite(const char* op, const std::vector<S>& v) {
  for (S x : v) {
    if (!std::isfinite(static_cast<double>(x)))
      throw Error(std::string(op) + ": produced a non-finite value");
  }
}

template <typename S>
TapeT<S>* merged_tape(const char* op, std::initializer_list<const TensorT<S>*> ins) {
  TapeT<S>* tape = nullptr;
  for (const TensorT<S>* t : ins) {
    TapeT<S>* other = t->node()->tape;
    if (!other) continue;
    if (tape && other != tape)
      throw Error(std::string(op) + ": inputs are watched by different tapes");
    tape = other;
  }
  return tape;
}

template <typename S>
bool any_tracked(std::initializer_list<const TensorT<S>*> ins) {
  for (const TensorT<S>* t : ins)
    if (t->node()->requires_grad) return true;
  return false;
}

template <typename S>
std::vector<S>& grad_buf(const RecPtr<S>& rec) {
  if (rec->grad.size() != rec->values.size()) rec->grad.assign(rec->values.size(), S(0));
  return rec->grad;
}

// Shared epilogue: finite check, then hook the backward closure onto the tape
// of the inputs (if any input is being traced and recording is enabled).
template <typename S>
void finish(const char* op, TensorT<S>& out, std::initializer_list<const TensorT<S>*> ins,
            std::function<void()> backward) {
  check_finite(op, out.node()->values);
  TapeT<S>* tape = merged_tape<S>(op, ins);
  if (tape && tape->enabled() && any_tracked<S>(ins)) {
    out.node()->requires_grad = true;
    out.node()->tape = tape;
    tape->record(std::move(backward));
  }
}

template <typename S>
void require_same_shape(const char* op, const TensorT<S>& a, const TensorT<S>& b) {
  if (a.shape() != b.shape())
    throw Error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                shape_str(b.shape()));
}

template <typename S>
void require_rank(const char* op, const TensorT<S>& t, int rank) {
  if (t.rank() != rank)
    throw Error(std::string(op) + ": expected rank-" + std::to_string(rank) + " input, got " +
                shape_str(t.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise

template <typename S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
  detail::require_same_shape("add", a, b);
  TensorT<S> out(a.shape());
  auto& ov = out.values();
  const auto& av = a.values();
  const auto& bv = b.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  auto an = a.node(), bn = b.node(), on = out.node();
  detail::finish<S>("add", out, {&a, &b}, [an, bn, on] {
    if (on->grad.empty()) return;
    if (an->requires_grad) {
      auto& g = detail::grad_buf<S>(an);
      for (size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i];
    }
    if (bn->requires_grad) {
      auto& g = detail::grad_buf<S>(bn);
      for (size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i];
    }
  });
  return out;
}

template <typename S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
  detail::require_same_shape("sub", a, b);
  TensorT<S> out(a.shape());
  auto& ov = out.values();
  const auto& av = a.values();
  const auto& bv = b.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
  auto an = a.node(), bn = b.node(), on = out.node();
  detail::finish<S>("sub", out, {&a, &b}, [an, bn, on] {
    if (on->grad.empty()) return;
    if (an->requires_grad) {
      auto& g = detail::grad_buf<S>(an);
      for (size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i];
    }
    if (bn->requires_grad) {
      auto& g = detail::grad_buf<S>(bn);
      for (size_t i = 0; i < g.size(); ++i) g[i] -= on->grad[i];
    }
  });
  return out;
}

template <typename S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
  detail::require_same_shape("mul", a, b);
  TensorT<S> out(a.shape());
  auto& ov = out.values();
  const auto& av = a.values();
  const auto& bv = b.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  auto an = a.node(), bn = b.node(), on = out.node();
  detail::finish<S>("mul", out, {&a, &b}, [an, bn, on] {
    if (on->grad.empty()) return;
    if (an->requires_grad) {
      auto& g = detail::grad_buf<S>(an);
      for (size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i] * bn->values[i];
    }
    if (bn->requires_grad) {
      auto& g = detail::grad_buf<S>(bn);
      for (size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i] * an->values[i];
    }
  });
  return out;
}

template <typename S>
TensorT<S> add_scalar(const TensorT<S>& a, S c) {
  TensorT<S> out(a.shape());
  auto& ov = out.values();
  const auto& av = a.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + c;
  auto an = a.node(), on = out.node();
  detail::finish<S>("add_scalar", out, {&a}, [an, on] {
    if (on->grad.empty() || !an->requires_grad) return;
    auto& g = detail::grad_buf<S>(an);
    for (size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i];
  });
  return out;
}

template <typename S>
TensorT<S> mul_scalar(const TensorT<S>& a, S c) {
  TensorT<S> out(a.shape());
  auto& ov = out.values();
  const auto& av = a.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * c;
  auto an = a.node(), on = out.node();
  detail::finish<S>("mul_scalar", out, {&a}, [an, on, c] {
    if (on->grad.empty() || !an->requires_grad) return;
    auto& g = detail::grad_buf<S>(an);
    for (size_t i = 0; i < g.size(); ++i) g[i] += c * on->grad[i];
  });
  return out;
}

// c - a, handy for complement masks.
template <typename S>
TensorT<S> rsub_scalar(S c, const TensorT<S>& a) {
  TensorT<S> out(a.shape());
  auto& ov = out.values();
  const auto& av = a.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = c - av[i];
  auto an = a.node(), on = out.node();
  detail::finish<S>("rsub_scalar", out, {&a}, [an, on] {
    if (on->grad.empty() || !an->requires_grad) return;
    auto& g = detail::grad_buf<S>(an);
    for (size_t i = 0; i < g.size(); ++i) g[i] -= on->grad[i];
  });
  return out;
}

template <typename S>
TensorT<S> relu(const TensorT<S>& a) {
  TensorT<S> out(a.shape());
  auto& ov = out.values();
  const auto& av = a.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] > S(0) ? av[i] : S(0);
  auto an = a.node(), on = out.node();
  detail::finish<S>("relu", out, {&a}, [an, on] {
    if (on->grad.empty() || !an->requires_grad) return;
    auto& g = detail::grad_buf<S>(an);
    for (size_t i = 0; i < g.size(); ++i)
      if (an->values[i] > S(0)) g[i] += on->grad[i];
  });
  return out;
}

template <typename S>
TensorT<S> sigmoid(const TensorT<S>& a) {
  TensorT<S> out(a.shape());
  auto& ov = out.values();
  const auto& av = a.values();
  for (size_t i = 0; i < ov.size(); ++i) {
    // Branch keeps exp() off large-magnitude inputs of the wrong sign.
    S x = av[i];
    if (x >= S(0)) {
      S e = std::exp(-x);
      ov[i] = S(1) / (S(1) + e);
    } else {
      S e = std::exp(x);
      ov[i] = e / (S(1) + e);
    }
  }
  auto an = a.node(), on = out.node();
  detail::finish<S>("sigmoid", out, {&a}, [an, on] {
    if (on->grad.empty() || !an->requires_grad) return;
    auto& g = detail::grad_buf<S>(an);
    for (size_t i = 0; i < g.size(); ++i) {
      S y = on->values[i];
      g[i] += on->grad[i] * y * (S(1) - y);
    }
  });
  return out;
}

template <typename S>
TensorT<S> square(const TensorT<S>& a) {
  TensorT<S> out(a.shape());
  auto& ov = out.values();
  const auto& av = a.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * av[i];
  auto an = a.node(), on = out.node();
  detail::finish<S>("square", out, {&a}, [an, on] {
    if (on->grad.empty() || !an->requires_grad) return;
    auto& g = detail::grad_buf<S>(an);
    for (size_t i = 0; i < g.size(); ++i) g[i] += S(2) * an->values[i] * on->grad[i];
  });
  return out;
}

// Natural log; non-positive inputs surface as the non-finite-output error.
template <typename S>
TensorT<S> log(const TensorT<S>& a) {
  TensorT<S> out(a.shape());
  auto& ov = out.values();
  const auto& av = a.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = std::log(av[i]);
  auto an = a.node(), on = out.node();
  detail::finish<S>("log", out, {&a}, [an, on] {
    if (on->grad.empty() || !an->requires_grad) return;
    auto& g = detail::grad_buf<S>(an);
    for (size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i] / an->values[i];
  });
  return out;
}

// ---------------------------------------------------------------------------
// reductions

template <typename S>
TensorT<S> sum(const TensorT<S>& a) {
  S acc = 0;
  for (S x : a.values()) acc += x;
  TensorT<S> out = TensorT<S>::scalar(acc);
  auto an = a.node(), on = out.node();
  detail::finish<S>("sum", out, {&a}, [an, on] {
    if (on->grad.empty() || !an->requires_grad) return;
    S g0 = on->grad[0];
    auto& g = detail::grad_buf<S>(an);
    for (size_t i = 0; i < g.size(); ++i) g[i] += g0;
  });
  return out;
}

template <typename S>
TensorT<S> mean(const TensorT<S>& a) {
  S acc = 0;
  for (S x : a.values()) acc += x;
  S inv = S(1) / static_cast<S>(a.numel());
  TensorT<S> out = TensorT<S>::scalar(acc * inv);
  auto an = a.node(), on = out.node();
  detail::finish<S>("mean", out, {&a}, [an, on, inv] {
    if (on->grad.empty() || !an->requires_grad) return;
    S g0 = on->grad[0] * inv;
    auto& g = detail::grad_buf<S>(an);
    for (size_t i = 0; i < g.size(); ++i) g[i] += g0;
  });
  return out;
}

template <typename S>
TensorT<S> l1_norm(const TensorT<S>& a) {
  S acc = 0;
  for (S x : a.values()) acc += std::abs(x);
  TensorT<S> out = TensorT<S>::scalar(acc);
  auto an = a.node(), on = out.node();
  detail::finish<S>("l1_norm", out, {&a}, [an, on] {
    if (on->grad.empty() || !an->requires_grad) return;
    S g0 = on->grad[0];
    auto& g = detail::grad_buf<S>(an);
    for (size_t i = 0; i < g.size(); ++i) {
      S x = an->values[i];
      if (x > S(0)) g[i] += g0;
      else if (x < S(0)) g[i] -= g0;
    }
  });
  return out;
}

// Euclidean norm (not squared).  Subgradient 0 at the origin.
template <typename S>
TensorT<S> l2_norm(const TensorT<S>& a) {
  S acc = 0;
  for (S x : a.values()) acc += x * x;
  S n = std::sqrt(acc);
  TensorT<S> out = TensorT<S>::scalar(n);
  auto an = a.node(), on = out.node();
  detail::finish<S>("l2_norm", out, {&a}, [an, on] {
    if (on->grad.empty() || !an->requires_grad) return;
    S n0 = on->values[0];
    if (n0 == S(0)) return;
    S g0 = on->grad[0] / n0;
    auto& g = detail::grad_buf<S>(an);
    for (size_t i = 0; i < g.size(); ++i) g[i] += g0 * an->values[i];
  });
  return out;
}

// ---------------------------------------------------------------------------
// linear algebra

template <typename S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
  detail::require_rank("matmul", a, 2);
  detail::require_rank("matmul", b, 2);
  const int n = a.dim(0), k = a.dim(1), m = b.dim(1);
  if (b.dim(0) != k)
    throw Error("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                shape_str(b.shape()));
  TensorT<S> out({n, m});
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (int i = 0; i < n; ++i) {
    for (int p = 0; p < k; ++p) {
      S aip = av[static_cast<size_t>(i) * k + p];
      if (aip == S(0)) continue;
      const S* brow = bv.data() + static_cast<size_t>(p) * m;
      S* orow = ov.data() + static_cast<size_t>(i) * m;
      for (int j = 0; j < m; ++j) orow[j] += aip * brow[j];
    }
  }
  auto an = a.node(), bn = b.node(), on = out.node();
  detail::finish<S>("matmul", out, {&a, &b}, [an, bn, on, n, k, m] {
    if (on->grad.empty()) return;
    const auto& g = on->grad;
    if (an->requires_grad) {
      auto& ga = detail::grad_buf<S>(an);
      for (int i = 0; i < n; ++i)
        for (int p = 0; p < k; ++p) {
          S acc = 0;
          const S* grow = g.data() + static_cast<size_t>(i) * m;
          const S* brow = bn->values.data() + static_cast<size_t>(p) * m;
          for (int j = 0; j < m; ++j) acc += grow[j] * brow[j];
          ga[static_cast<size_t>(i) * k + p] += acc;
        }
    }
    if (bn->requires_grad) {
      auto& gb = detail::grad_buf<S>(bn);
      for (int p = 0; p < k; ++p)
        for (int i = 0; i < n; ++i) {
          S apv = an->values[static_cast<size_t>(i) * k + p];
          if (apv == S(0)) continue;
          const S* grow = g.data() + static_cast<size_t>(i) * m;
          S* gbrow = gb.data() + static_cast<size_t>(p) * m;
          for (int j = 0; j < m; ++j) gbrow[j] += apv * grow[j];
        }
    }
  });
  return out;
}

// x: [N,M], bias: [M]; adds the bias to every row.
template <typename S>
TensorT<S> add_rowvec(const TensorT<S>& x, const TensorT<S>& bias) {
  detail::require_rank("add_rowvec", x, 2);
  detail::require_rank("add_rowvec", bias, 1);
  const int n = x.dim(0), m = x.dim(1);
  if (bias.dim(0) != m)
    throw Error("add_rowvec: bias " + shape_str(bias.shape()) + " does not match row width " +
                std::to_string(m));
  TensorT<S> out({n, m});
  const auto& xv = x.values();
  const auto& bv = bias.values();
  auto& ov = out.values();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j)
      ov[static_cast<size_t>(i) * m + j] = xv[static_cast<size_t>(i) * m + j] + bv[static_cast<size_t>(j)];
  auto xn = x.node(), bn = bias.node(), on = out.node();
  detail::finish<S>("add_rowvec", out, {&x, &bias}, [xn, bn, on, n, m] {
    if (on->grad.empty()) return;
    if (xn->requires_grad) {
      auto& g = detail::grad_buf<S>(xn);
      for (size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i];
    }
    if (bn->requires_grad) {
      auto& g = detail::grad_buf<S>(bn);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) g[static_cast<size_t>(j)] += on->grad[static_cast<size_t>(i) * m + j];
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// convolution stack (NHWC layout, valid padding, stride 1)

template <typename S>
TensorT<S> conv2d(const TensorT<S>& x, const TensorT<S>& kernel) {
  detail::require_rank("conv2d", x, 4);
  detail::require_rank("conv2d", kernel, 4);
  const int n = x.dim(0), h = x.dim(1), w = x.dim(2), ci = x.dim(3);
  const int kh = kernel.dim(0), kw = kernel.dim(1), kci = kernel.dim(2), co = kernel.dim(3);
  if (kci != ci)
    throw Error("conv2d: kernel channels " + shape_str(kernel.shape()) +
                " do not match input " + shape_str(x.shape()));
  if (kh > h || kw > w)
    throw Error("conv2d: kernel " + shape_str(kernel.shape()) + " larger than input " +
                shape_str(x.shape()));
  const int oh = h - kh + 1, ow = w - kw + 1;
  TensorT<S> out({n, oh, ow, co});
  const S* xv = x.values().data();
  const S* kv = kernel.values().data();
  S* ov = out.values().data();
  auto xat = [&](int b, int i, int j) { return xv + ((static_cast<size_t>(b) * h + i) * w + j) * ci; };
  for (int b = 0; b < n; ++b)
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) {
        S* orow = ov + ((static_cast<size_t>(b) * oh + i) * ow + j) * co;
        for (int u = 0; u < kh; ++u)
          for (int v = 0; v < kw; ++v) {
            const S* xrow = xat(b, i + u, j + v);
            const S* krow = kv + (static_cast<size_t>(u) * kw + v) * ci * co;
            for (int c = 0; c < ci; ++c) {
              S xval = xrow[c];
              if (xval == S(0)) continue;
              const S* kc = krow + static_cast<size_t>(c) * co;
              for (int o = 0; o < co; ++o) orow[o] += xval * kc[o];
            }
          }
      }
  auto xn = x.node(), kn = kernel.node(), on = out.node();
  detail::finish<S>("conv2d", out, {&x, &kernel}, [xn, kn, on, n, h, w, ci, kh, kw, co, oh, ow] {
    if (on->grad.empty()) return;
    const S* g = on->grad.data();
    const bool need_x = xn->requires_grad;
    const bool need_k = kn->requires_grad;
    S* gx = need_x ? detail::grad_buf<S>(xn).data() : nullptr;
    S* gk = need_k ? detail::grad_buf<S>(kn).data() : nullptr;
    const S* xv = xn->values.data();
    const S* kv = kn->values.data();
    for (int b = 0; b < n; ++b)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
          const S* grow = g + ((static_cast<size_t>(b) * oh + i) * ow + j) * co;
          for (int u = 0; u < kh; ++u)
            for (int v = 0; v < kw; ++v) {
              const size_t xoff = ((static_cast<size_t>(b) * h + (i + u)) * w + (j + v)) * ci;
              const size_t koff = (static_cast<size_t>(u) * kw + v) * ci * co;
              for (int c = 0; c < ci; ++c) {
                if (need_x) {
                  S acc = 0;
                  const S* kc = kv + koff + static_cast<size_t>(c) * co;
                  for (int o = 0; o < co; ++o) acc += grow[o] * kc[o];
                  gx[xoff + static_cast<size_t>(c)] += acc;
                }
                if (need_k) {
                  S xval = xv[xoff + static_cast<size_t>(c)];
                  if (xval == S(0)) continue;
                  S* gkc = gk + koff + static_cast<size_t>(c) * co;
                  for (int o = 0; o < co; ++o) gkc[o] += xval * grow[o];
                }
              }
            }
        }
  });
  return out;
}

// x: [N,H,W,C], bias: [C]; adds per-channel bias.
template <typename S>
TensorT<S> add_channel_bias(const TensorT<S>& x, const TensorT<S>& bias) {
  detail::require_rank("add_channel_bias", x, 4);
  detail::require_rank("add_channel_bias", bias, 1);
  const int c = x.dim(3);
  if (bias.dim(0) != c)
    throw Error("add_channel_bias: bias " + shape_str(bias.shape()) +
                " does not match channel count " + std::to_string(c));
  TensorT<S> out(x.shape());
  const auto& xv = x.values();
  const auto& bv = bias.values();
  auto& ov = out.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] + bv[i % static_cast<size_t>(c)];
  auto xn = x.node(), bn = bias.node(), on = out.node();
  detail::finish<S>("add_channel_bias", out, {&x, &bias}, [xn, bn, on, c] {
    if (on->grad.empty()) return;
    if (xn->requires_grad) {
      auto& g = detail::grad_buf<S>(xn);
      for (size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i];
    }
    if (bn->requires_grad) {
      auto& g = detail::grad_buf<S>(bn);
      for (size_t i = 0; i < on->grad.size(); ++i) g[i % static_cast<size_t>(c)] += on->grad[i];
    }
  });
  return out;
}

// 2x2 max pooling with stride 2, truncating odd edges.  Ties resolve to the
// first maximum in scan order so results do not depend on summation order.
template <typename S>
TensorT<S> maxpool2(const TensorT<S>& x) {
  detail::require_rank("maxpool2", x, 4);
  const int n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  if (h < 2 || w < 2)
    throw Error("maxpool2: input " + shape_str(x.shape()) + " is smaller than the 2x2 window");
  const int oh = h / 2, ow = w / 2;
  TensorT<S> out({n, oh, ow, c});
  auto arg = std::make_shared<std::vector<size_t>>(out.values().size());
  const auto& xv = x.values();
  auto& ov = out.values();
  size_t oi = 0;
  for (int b = 0; b < n; ++b)
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j)
        for (int ch = 0; ch < c; ++ch, ++oi) {
          S best = 0;
          size_t besti = 0;
          bool first = true;
          for (int u = 0; u < 2; ++u)
            for (int v = 0; v < 2; ++v) {
              size_t idx = ((static_cast<size_t>(b) * h + (2 * i + u)) * w + (2 * j + v)) * c + ch;
              if (first || xv[idx] > best) {
                best = xv[idx];
                besti = idx;
                first = false;
              }
            }
          ov[oi] = best;
          (*arg)[oi] = besti;
        }
  auto xn = x.node(), on = out.node();
  detail::finish<S>("maxpool2", out, {&x}, [xn, on, arg] {
    if (on->grad.empty() || !xn->requires_grad) return;
    auto& g = detail::grad_buf<S>(xn);
    for (size_t i = 0; i < on->grad.size(); ++i) g[(*arg)[i]] += on->grad[i];
  });
  return out;
}

// ---------------------------------------------------------------------------
// classification head

// Row-wise stable softmax over [N,C].
template <typename S>
TensorT<S> softmax_rows(const TensorT<S>& z) {
  detail::require_rank("softmax_rows", z, 2);
  const int n = z.dim(0), c = z.dim(1);
  TensorT<S> out(z.shape());
  const auto& zv = z.values();
  auto& ov = out.values();
  for (int i = 0; i < n; ++i) {
    const S* row = zv.data() + static_cast<size_t>(i) * c;
    S* orow = ov.data() + static_cast<size_t>(i) * c;
    S m = row[0];
    for (int j = 1; j < c; ++j) m = std::max(m, row[j]);
    S total = 0;
    for (int j = 0; j < c; ++j) {
      orow[j] = std::exp(row[j] - m);
      total += orow[j];
    }
    for (int j = 0; j < c; ++j) orow[j] /= total;
  }
  auto zn = z.node(), on = out.node();
  detail::finish<S>("softmax_rows", out, {&z}, [zn, on, n, c] {
    if (on->grad.empty() || !zn->requires_grad) return;
    auto& g = detail::grad_buf<S>(zn);
    for (int i = 0; i < n; ++i) {
      const S* p = on->values.data() + static_cast<size_t>(i) * c;
      const S* go = on->grad.data() + static_cast<size_t>(i) * c;
      S dot = 0;
      for (int j = 0; j < c; ++j) dot += go[j] * p[j];
      S* gz = g.data() + static_cast<size_t>(i) * c;
      for (int j = 0; j < c; ++j) gz[j] += p[j] * (go[j] - dot);
    }
  });
  return out;
}

// Mean softmax cross-entropy of logits [N,C] against integer labels.  Fusing
// the two keeps the backward pass the numerically friendly (p - onehot)/N.
template <typename S>
TensorT<S> cross_entropy_softmax(const TensorT<S>& z, const std::vector<int>& labels) {
  detail::require_rank("cross_entropy_softmax", z, 2);
  const int n = z.dim(0), c = z.dim(1);
  require(static_cast<int>(labels.size()) == n,
          "cross_entropy_softmax: " + std::to_string(labels.size()) + " labels for " +
              std::to_string(n) + " rows");
  for (int y : labels)
    require(y >= 0 && y < c, "cross_entropy_softmax: label " + std::to_string(y) +
                                 " outside [0," + std::to_string(c) + ")");
  auto probs = std::make_shared<std::vector<S>>(static_cast<size_t>(n) * c);
  const auto& zv = z.values();
  S loss = 0;
  for (int i = 0; i < n; ++i) {
    const S* row = zv.data() + static_cast<size_t>(i) * c;
    S* prow = probs->data() + static_cast<size_t>(i) * c;
    S m = row[0];
    for (int j = 1; j < c; ++j) m = std::max(m, row[j]);
    S total = 0;
    for (int j = 0; j < c; ++j) {
      prow[j] = std::exp(row[j] - m);
      total += prow[j];
    }
    for (int j = 0; j < c; ++j) prow[j] /= total;
    loss -= row[labels[static_cast<size_t>(i)]] - m - std::log(total);
  }
  loss /= static_cast<S>(n);
  TensorT<S> out = TensorT<S>::scalar(loss);
  auto zn = z.node(), on = out.node();
  auto lab = std::make_shared<std::vector<int>>(labels);
  detail::finish<S>("cross_entropy_softmax", out, {&z}, [zn, on, probs, lab, n, c] {
    if (on->grad.empty() || !zn->requires_grad) return;
    S g0 = on->grad[0] / static_cast<S>(n);
    auto& g = detail::grad_buf<S>(zn);
    for (int i = 0; i < n; ++i) {
      const S* prow = probs->data() + static_cast<size_t>(i) * c;
      S* grow = g.data() + static_cast<size_t>(i) * c;
      int y = (*lab)[static_cast<size_t>(i)];
      for (int j = 0; j < c; ++j) grow[j] += g0 * (prow[j] - (j == y ? S(1) : S(0)));
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// shape plumbing

template <typename S>
TensorT<S> reshape(const TensorT<S>& x, std::vector<int> shape) {
  int64_t target = TensorT<S>::count(shape);
  require(target == x.numel(), "reshape: cannot view " + shape_str(x.shape()) + " as " +
                                   shape_str(shape));
  TensorT<S> out(std::move(shape), x.values());
  auto xn = x.node(), on = out.node();
  detail::finish<S>("reshape", out, {&x}, [xn, on] {
    if (on->grad.empty() || !xn->requires_grad) return;
    auto& g = detail::grad_buf<S>(xn);
    for (size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i];
  });
  return out;
}

// [H,W] -> [H,W,C]: repeats a single-plane mask across channels.
template <typename S>
TensorT<S> broadcast_channels(const TensorT<S>& m, int channels) {
  detail::require_rank("broadcast_channels", m, 2);
  require(channels > 0, "broadcast_channels: channel count must be positive");
  const int h = m.dim(0), w = m.dim(1);
  TensorT<S> out({h, w, channels});
  const auto& mv = m.values();
  auto& ov = out.values();
  for (size_t i = 0; i < mv.size(); ++i)
    for (int c = 0; c < channels; ++c) ov[i * static_cast<size_t>(channels) + c] = mv[i];
  auto mn = m.node(), on = out.node();
  detail::finish<S>("broadcast_channels", out, {&m}, [mn, on, channels] {
    if (on->grad.empty() || !mn->requires_grad) return;
    auto& g = detail::grad_buf<S>(mn);
    for (size_t i = 0; i < g.size(); ++i) {
      S acc = 0;
      for (int c = 0; c < channels; ++c) acc += on->grad[i * static_cast<size_t>(channels) + c];
      g[i] += acc;
    }
  });
  return out;
}

// [dims...] -> [N,dims...]: repeats a tensor along a new leading batch axis.
template <typename S>
TensorT<S> broadcast_batch(const TensorT<S>& x, int n) {
  require(n > 0, "broadcast_batch: batch size must be positive");
  std::vector<int> shape;
  shape.reserve(x.shape().size() + 1);
  shape.push_back(n);
  for (int d : x.shape()) shape.push_back(d);
  TensorT<S> out(std::move(shape));
  const auto& xv = x.values();
  auto& ov = out.values();
  for (int b = 0; b < n; ++b)
    std::copy(xv.begin(), xv.end(), ov.begin() + static_cast<int64_t>(b) * x.numel());
  auto xn = x.node(), on = out.node();
  const size_t stride = xv.size();
  detail::finish<S>("broadcast_batch", out, {&x}, [xn, on, n, stride] {
    if (on->grad.empty() || !xn->requires_grad) return;
    auto& g = detail::grad_buf<S>(xn);
    for (int b = 0; b < n; ++b) {
      const S* src = on->grad.data() + static_cast<size_t>(b) * stride;
      for (size_t i = 0; i < stride; ++i) g[i] += src[i];
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// trigger geometry

// Sum of squared horizontal and vertical neighbour differences.  Accepts a
// plane [H,W] or a stack of planes [H,W,C] (channels contribute
// independently).
template <typename S>
TensorT<S> smoothness(const TensorT<S>& a) {
  const int rank = a.rank();
  require(rank == 2 || rank == 3,
          "smoothness: expected [H,W] or [H,W,C], got " + shape_str(a.shape()));
  const int h = a.dim(0), w = a.dim(1), c = rank == 3 ? a.dim(2) : 1;
  const auto& av = a.values();
  auto at = [&](int i, int j, int ch) {
    return av[(static_cast<size_t>(i) * w + j) * c + ch];
  };
  S acc = 0;
  for (int ch = 0; ch < c; ++ch) {
    for (int i = 0; i < h; ++i)
      for (int j = 0; j + 1 < w; ++j) {
        S d = at(i, j, ch) - at(i, j + 1, ch);
        acc += d * d;
      }
    for (int i = 0; i + 1 < h; ++i)
      for (int j = 0; j < w; ++j) {
        S d = at(i, j, ch) - at(i + 1, j, ch);
        acc += d * d;
      }
  }
  TensorT<S> out = TensorT<S>::scalar(acc);
  auto an = a.node(), on = out.node();
  detail::finish<S>("smoothness", out, {&a}, [an, on, h, w, c] {
    if (on->grad.empty() || !an->requires_grad) return;
    S g0 = on->grad[0];
    auto& g = detail::grad_buf<S>(an);
    const auto& v = an->values;
    auto idx = [&](int i, int j, int ch) { return (static_cast<size_t>(i) * w + j) * c + ch; };
    for (int ch = 0; ch < c; ++ch) {
      for (int i = 0; i < h; ++i)
        for (int j = 0; j + 1 < w; ++j) {
          S d = S(2) * (v[idx(i, j, ch)] - v[idx(i, j + 1, ch)]) * g0;
          g[idx(i, j, ch)] += d;
          g[idx(i, j + 1, ch)] -= d;
        }
      for (int i = 0; i + 1 < h; ++i)
        for (int j = 0; j < w; ++j) {
          S d = S(2) * (v[idx(i, j, ch)] - v[idx(i + 1, j, ch)]) * g0;
          g[idx(i, j, ch)] += d;
          g[idx(i + 1, j, ch)] -= d;
        }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// non-differentiable helpers

// First index of the row maximum for each row of [N,C].
template <typename S>
std::vector<int> argmax_rows(const TensorT<S>& t) {
  detail::require_rank("argmax_rows", t, 2);
  const int n = t.dim(0), c = t.dim(1);
  std::vector<int> out(static_cast<size_t>(n));
  const auto& v = t.values();
  for (int i = 0; i < n; ++i) {
    const S* row = v.data() + static_cast<size_t>(i) * c;
    int best = 0;
    for (int j = 1; j < c; ++j)
      if (row[j] > row[best]) best = j;
    out[static_cast<size_t>(i)] = best;
  }
  return out;
}

}  // namespace tabor
