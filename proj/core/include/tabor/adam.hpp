#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "tabor/common.hpp"
#include "tabor/tensor.hpp"

namespace tabor {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias-corrected first and second moments.  One state per
// parameter tensor; step() applies the update in place.
template <typename S>
class AdamT {
 public:
  AdamT(std::vector<TensorT<S>> params, AdamConfig cfg = {}) : params_(std::move(params)), cfg_(cfg) {
    require(cfg_.learning_rate > 0, "adam: learning rate must be positive");
    require(cfg_.beta1 >= 0 && cfg_.beta1 < 1 && cfg_.beta2 >= 0 && cfg_.beta2 < 1,
            "adam: betas must lie in [0,1)");
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(static_cast<size_t>(params_[i].numel()), S(0));
      v_[i].assign(static_cast<size_t>(params_[i].numel()), S(0));
    }
  }

  // Consumes the gradients currently stored on the parameters.
  void step() {
    ++t_;
    const S lr = static_cast<S>(cfg_.learning_rate);
    const S b1 = static_cast<S>(cfg_.beta1);
    const S b2 = static_cast<S>(cfg_.beta2);
    const S eps = static_cast<S>(cfg_.epsilon);
    const S corr1 = S(1) - static_cast<S>(std::pow(cfg_.beta1, t_));
    const S corr2 = S(1) - static_cast<S>(std::pow(cfg_.beta2, t_));
    for (size_t p = 0; p < params_.size(); ++p) {
      auto& param = params_[p];
      const auto& g = param.grad();
      require(g.size() == static_cast<size_t>(param.numel()),
              "adam: gradient size does not match parameter");
      auto& vals = param.values();
      auto& m = m_[p];
      auto& v = v_[p];
      for (size_t i = 0; i < vals.size(); ++i) {
        m[i] = b1 * m[i] + (S(1) - b1) * g[i];
        v[i] = b2 * v[i] + (S(1) - b2) * g[i] * g[i];
        S mhat = m[i] / corr1;
        S vhat = v[i] / corr2;
        vals[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        require(std::isfinite(static_cast<double>(vals[i])), "adam: parameter became non-finite");
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  int64_t steps_taken() const { return t_; }

 private:
  std::vector<TensorT<S>> params_;
  AdamConfig cfg_;
  std::vector<std::vector<S>> m_, v_;
  int64_t t_ = 0;
};

using Adam = AdamT<float>;

}  // namespace tabor
