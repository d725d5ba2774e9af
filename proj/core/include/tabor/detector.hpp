#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tabor/network.hpp"
#include "tabor/ops.hpp"

namespace tabor {

// Trigger reconstruction settings.  The λ vector weights, in order: mask
// elastic norm, residual-pattern elastic norm, mask smoothness, residual
// smoothness, crop-consistency loss, patch-only loss.  MaskOnly mode drops
// everything except a plain L1 penalty on the mask (the classic norm-only
// reconstruction) and never adapts its weight.
struct DetectorConfig {
  enum class Mode { Tabor, MaskOnly };

  Mode mode = Mode::Tabor;
  std::array<double, 6> lambdas{1e-6, 1e-5, 1e-7, 1e-8, 1e-6, 1e-2};
  double baseline_lambda = 1e-3;

  int epochs = 500;
  double learning_rate = 1e-3;
  int batch_size = 32;
  int eval_batch_size = 64;

  double success_threshold = 0.95;  // attack success that counts as "working"
  double step_multiplier = 1.5;     // per-epoch λ adjustment factor
  double stability_eps = 1e-3;      // per-term plateau tolerance
  int min_stable_epochs = 20;       // ignore the trivial plateau at the start

  double binarize_threshold = 0.01;
  uint64_t seed = 0;

  void validate() const;
};

// A reconstructed trigger for one target class.  Both tensors are logits;
// sigmoid squashing keeps mask and pattern inside [0,1] with no constraint
// handling in the optimizer.  The mask is a single plane shared by all
// channels.
template <typename S>
struct TriggerCandidateT {
  int target_class = 0;
  TensorT<S> mask_logits;     // [H,W]
  TensorT<S> pattern_logits;  // [H,W,C]

  TensorT<S> mask() const { return sigmoid(mask_logits.detach()); }
  TensorT<S> pattern() const { return sigmoid(pattern_logits.detach()); }

  // Binary footprint: pixels where some channel of mask*pattern clears tau.
  std::vector<uint8_t> binarized(double tau) const {
    TensorT<S> m = mask();
    TensorT<S> p = pattern();
    const int h = m.dim(0), w = m.dim(1), c = p.dim(2);
    std::vector<uint8_t> out(static_cast<size_t>(h) * w, 0);
    for (size_t i = 0; i < out.size(); ++i) {
      S best = 0;
      for (int ch = 0; ch < c; ++ch)
        best = std::max(best, m.values()[i] * p.values()[i * static_cast<size_t>(c) + ch]);
      out[i] = best > static_cast<S>(tau) ? 1 : 0;
    }
    return out;
  }
};

using TriggerCandidate = TriggerCandidateT<float>;

// Blends a trigger into every image of a batch: x*(1-M) + pattern*M.
// Differentiable in all three tensors.
template <typename S>
TensorT<S> apply_candidate(const TensorT<S>& batch, const TensorT<S>& mask2d,
                           const TensorT<S>& pattern) {
  const int n = batch.dim(0), c = batch.dim(3);
  TensorT<S> mc = broadcast_channels(mask2d, c);
  TensorT<S> keep = mul(batch, broadcast_batch(rsub_scalar(S(1), mc), n));
  TensorT<S> put = broadcast_batch(mul(pattern, mc), n);
  return add(keep, put);
}

template <typename S>
struct ObjectiveTerms {
  TensorT<S> objective;
  TensorT<S> base;             // targeted misclassification loss
  std::array<TensorT<S>, 4> reg;  // λ-scaled regularizer values
};

// One optimization step's graph: stamp the batch with the current candidate,
// push it toward the target class, and regularize.  reg[0] elastic norms,
// reg[1] smoothness, reg[2] crop consistency, reg[3] patch-only loss; terms
// whose λ is zero stay constant-zero and cost nothing.
template <typename S>
ObjectiveTerms<S> build_objective(const NetworkT<S>& net, const TensorT<S>& batch,
                                  const std::vector<int>& labels, int target,
                                  const TensorT<S>& mask_logits, const TensorT<S>& pattern_logits,
                                  const DetectorConfig& cfg, const std::array<double, 6>& lambdas) {
  const int n = batch.dim(0);
  const int h = batch.dim(1), w = batch.dim(2), c = batch.dim(3);
  TensorT<S> m2 = sigmoid(mask_logits);       // [H,W]
  TensorT<S> mc = broadcast_channels(m2, c);  // [H,W,C]
  TensorT<S> delta = sigmoid(pattern_logits);
  TensorT<S> inv = rsub_scalar(S(1), mc);
  TensorT<S> patch = mul(delta, mc);
  TensorT<S> stamped = add(mul(batch, broadcast_batch(inv, n)), broadcast_batch(patch, n));

  ObjectiveTerms<S> t;
  t.base = cross_entropy_softmax(net.forward_logits(stamped), std::vector<int>(static_cast<size_t>(n), target));
  TensorT<S> zero = TensorT<S>::scalar(S(0));
  for (auto& r : t.reg) r = zero;

  if (cfg.mode == DetectorConfig::Mode::MaskOnly) {
    t.reg[0] = mul_scalar(l1_norm(m2), static_cast<S>(cfg.baseline_lambda));
  } else {
    // Residual pattern: the part of delta living outside the mask.
    TensorT<S> resid = mul(inv, delta);
    if (lambdas[0] != 0.0) {
      TensorT<S> elastic = add(l1_norm(m2), l2_norm(m2));
      t.reg[0] = add(t.reg[0], mul_scalar(elastic, static_cast<S>(lambdas[0])));
    }
    if (lambdas[1] != 0.0) {
      TensorT<S> elastic = add(l1_norm(resid), l2_norm(resid));
      t.reg[0] = add(t.reg[0], mul_scalar(elastic, static_cast<S>(lambdas[1])));
    }
    if (lambdas[2] != 0.0)
      t.reg[1] = add(t.reg[1], mul_scalar(smoothness(m2), static_cast<S>(lambdas[2])));
    if (lambdas[3] != 0.0)
      t.reg[1] = add(t.reg[1], mul_scalar(smoothness(resid), static_cast<S>(lambdas[3])));
    if (lambdas[4] != 0.0) {
      TensorT<S> cropped = mul(batch, broadcast_batch(inv, n));
      TensorT<S> crop_loss = cross_entropy_softmax(net.forward_logits(cropped), labels);
      t.reg[2] = mul_scalar(crop_loss, static_cast<S>(lambdas[4]));
    }
    if (lambdas[5] != 0.0) {
      TensorT<S> alone = reshape(patch, {1, h, w, c});
      TensorT<S> alone_loss = cross_entropy_softmax(net.forward_logits(alone), {target});
      t.reg[3] = mul_scalar(alone_loss, static_cast<S>(lambdas[5]));
    }
  }
  t.objective = add(add(add(add(t.base, t.reg[0]), t.reg[1]), t.reg[2]), t.reg[3]);
  return t;
}

struct SolveTracePoint {
  int epoch = 0;
  double objective = 0;
  double attack_success = 0;
  std::array<double, 4> reg{};
};

struct SolveResult {
  TriggerCandidate candidate;
  std::array<double, 6> final_lambdas{};
  std::vector<SolveTracePoint> trace;
  bool converged = false;
  int epochs_run = 0;
  std::string error;  // non-empty: this class failed, scan carries on
};

// Fraction of batch rows steered into the candidate's target class, counted
// over rows whose true label differs from the target.
double attack_success(const Network& net, const Tensor& batch, const std::vector<int>& labels,
                      const TriggerCandidate& cand);

// Reconstructs the smallest working trigger for one target class by Adam on
// the sigmoid logits, with per-epoch λ adaptation: success above the
// threshold tightens every regularizer, anything less relaxes them.  Stops
// early once every λ-scaled term has plateaued while the attack keeps
// working.
SolveResult solve_for_target(const Network& net, const LabeledDataset& data, int target,
                             const DetectorConfig& cfg);

// Runs solve_for_target for every class.  jobs > 1 distributes classes over
// threads; per-class seeds are derived independently, so the result is
// byte-identical to the serial run.
std::map<int, SolveResult> scan_all_classes(const Network& net, const LabeledDataset& data,
                                            const DetectorConfig& cfg, int jobs = 1);

// Unlearning: fine-tunes on a fraction of the training split stamped with
// the reconstructed trigger but keeping true labels, which decouples the
// trigger from the target class.
Network patch_unlearning(const Network& net, const TriggerCandidate& cand,
                         const LabeledDataset& data, const TrainConfig& cfg,
                         double fraction = 0.2);

// Candidate archives reuse the TBRM container.
void save_candidate(const TriggerCandidate& cand, const std::string& path,
                    const std::string& config = "");
TriggerCandidate load_candidate(const std::string& path);

}  // namespace tabor
