#include "tabor/judge.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tabor/rng.hpp"

namespace tabor {
namespace {

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  if (n % 2 == 1) return v[n / 2];
  return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

double QualityScore::combine(double sparsity, double smoothness, double acc_att, double acc_crop,
                             double acc_exp) {
  auto floor_at = [](double v, double f) { return std::max(v, f); };
  return std::log(floor_at(sparsity, 1e-12)) + std::log(floor_at(smoothness, 1e-12)) -
         std::log(floor_at(acc_att, 1e-6)) - std::log(floor_at(acc_crop, 1e-6)) -
         std::log(floor_at(acc_exp, 1e-6));
}

QualityScore quality(const Network& net, const LabeledDataset& data, const TriggerCandidate& cand,
                     const JudgeConfig& cfg) {
  require(cand.mask_logits.defined() && cand.pattern_logits.defined(),
          "quality: candidate has no tensors");
  const int h = data.height, w = data.width, c = data.channels;
  require(cand.mask_logits.dim(0) == h && cand.mask_logits.dim(1) == w &&
              cand.pattern_logits.dim(2) == c,
          "quality: candidate geometry does not match the dataset");

  QualityScore q;
  q.class_id = cand.target_class;

  // Footprint statistics.
  std::vector<uint8_t> fp = cand.binarized(cfg.binarize_threshold);
  double count = 0;
  for (uint8_t b : fp) count += b;
  double edges = 0;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j + 1 < w; ++j) {
      double d = static_cast<double>(fp[static_cast<size_t>(i) * w + j]) -
                 static_cast<double>(fp[static_cast<size_t>(i) * w + j + 1]);
      edges += d * d;
    }
  for (int i = 0; i + 1 < h; ++i)
    for (int j = 0; j < w; ++j) {
      double d = static_cast<double>(fp[static_cast<size_t>(i) * w + j]) -
                 static_cast<double>(fp[static_cast<size_t>(i + 1) * w + j]);
      edges += d * d;
    }
  // Half the undirected neighbour-pair count; for a square d x d plane this
  // is exactly d*(d-1).
  const double pair_norm = (h * (w - 1) + w * (h - 1)) / 2.0;
  q.sparsity = count / (static_cast<double>(h) * w);
  q.smoothness = edges / pair_norm;

  // Behavioural terms on a seeded clean evaluation batch.
  std::vector<int> pool = data.test_indices();
  if (pool.empty()) pool = data.train_indices();
  require(!pool.empty(), "quality: no clean samples to evaluate on");
  Rng rng(derive_seed(cfg.seed, 7));
  const int n = std::min<int>(cfg.eval_batch_size, static_cast<int>(pool.size()));
  std::vector<int> pick = rng.sample(static_cast<int>(pool.size()), n);
  std::vector<int> idx;
  idx.reserve(pick.size());
  for (int p : pick) idx.push_back(pool[static_cast<size_t>(p)]);
  Tensor batch = make_batch<float>(data, idx);
  std::vector<int> labels = labels_of(data, idx);

  q.acc_att = attack_success(net, batch, labels, cand);

  Tensor mask = cand.mask();
  Tensor pattern = cand.pattern();
  Tensor inv = rsub_scalar(1.0f, broadcast_channels(mask, c));
  Tensor cropped = mul(batch, broadcast_batch(inv, n));
  std::vector<int> pred = argmax_rows(net.forward_logits(cropped));
  size_t hits = 0;
  for (size_t i = 0; i < labels.size(); ++i)
    if (pred[i] == labels[i]) ++hits;
  q.acc_crop = static_cast<double>(hits) / static_cast<double>(labels.size());

  Tensor alone = reshape(mul(pattern, broadcast_channels(mask, c)), {1, h, w, c});
  Tensor probs = net.predict(alone);
  q.acc_exp = static_cast<double>(probs.values()[static_cast<size_t>(cand.target_class)]);

  if (count == 0) {
    // Nothing survived binarization: there is no trigger here.  The sentinel
    // keeps the class out of the low tail no matter what the accuracies say.
    q.empty_footprint = true;
    q.score = std::numeric_limits<double>::infinity();
  } else {
    q.score = QualityScore::combine(q.sparsity, q.smoothness, q.acc_att, q.acc_crop, q.acc_exp);
  }
  return q;
}

MadInfo mad_outliers(std::vector<QualityScore>& scores, double threshold) {
  require(scores.size() >= 3,
          "mad_outliers: need at least three classes, got " + std::to_string(scores.size()));
  require(threshold > 0, "mad_outliers: threshold must be positive");

  // Empty-footprint sentinels are excluded from the statistics; they can
  // never be flagged and would otherwise poison the median.
  std::vector<double> values;
  values.reserve(scores.size());
  for (const QualityScore& s : scores)
    if (std::isfinite(s.score)) values.push_back(s.score);

  MadInfo info;
  if (values.size() < 3) {
    info.degenerate = true;
    info.error = "fewer than three finite scores; cannot estimate the spread";
    for (QualityScore& s : scores) {
      s.anomaly_index = 0;
      s.flagged = false;
    }
    return info;
  }
  info.median = median_of(values);

  std::vector<double> deviations;
  deviations.reserve(values.size());
  for (double v : values) deviations.push_back(std::abs(v - info.median));
  info.mad = median_of(deviations);

  if (info.mad == 0.0) {
    // Zero spread: with consistent scores that just means nothing stands
    // out, but any non-trivial deviation alongside a zero MAD is a numeric
    // pathology worth surfacing rather than silently judging.
    info.degenerate = true;
    for (double d : deviations)
      if (d > 1e-6) {
        info.error = "zero spread with non-zero deviations; scores are pathological";
        break;
      }
    for (QualityScore& s : scores) {
      s.anomaly_index = 0;
      s.flagged = false;
    }
    return info;
  }

  const double scale = 1.4826 * info.mad;
  for (QualityScore& s : scores) {
    if (!std::isfinite(s.score)) {
      s.anomaly_index = 0;
      s.flagged = false;
      continue;
    }
    s.anomaly_index = std::abs(s.score - info.median) / scale;
    // Only unusually *low* scores indicate a planted trigger; the high side
    // is just a class that reconstructs badly.
    s.flagged = s.anomaly_index > threshold && s.score < info.median;
  }
  return info;
}

DetectionReport judge(const Network& net, const LabeledDataset& data,
                      const std::map<int, SolveResult>& scan, const JudgeConfig& cfg) {
  require(!scan.empty(), "judge: empty scan");
  DetectionReport report;
  report.seed = cfg.seed;

  std::vector<QualityScore> scores;
  std::vector<int> scored_classes;
  for (const auto& [cls, solve] : scan) {
    ClassReport cr;
    cr.class_id = cls;
    cr.error = solve.error;
    cr.converged = solve.converged;
    cr.epochs_run = solve.epochs_run;
    cr.final_lambdas = solve.final_lambdas;
    if (!solve.trace.empty()) cr.final_objective = solve.trace.back().objective;
    if (solve.error.empty()) {
      cr.quality = quality(net, data, solve.candidate, cfg);
      scores.push_back(cr.quality);
      scored_classes.push_back(cls);
    }
    report.classes.push_back(std::move(cr));
  }

  if (scores.size() < 3) {
    report.mad.error = "fewer than three classes produced a usable score";
    report.verdict = "clean";
    return report;
  }

  report.mad = mad_outliers(scores, cfg.mad_threshold);
  for (size_t i = 0; i < scores.size(); ++i) {
    for (ClassReport& cr : report.classes)
      if (cr.class_id == scored_classes[i]) cr.quality = scores[i];
    if (scores[i].flagged) report.flagged.push_back(scored_classes[i]);
  }
  std::sort(report.flagged.begin(), report.flagged.end());
  report.verdict = report.flagged.empty() ? "clean" : "infected";
  return report;
}

Fidelity fidelity(const std::vector<uint8_t>& restored, const std::vector<uint8_t>& truth) {
  require(restored.size() == truth.size(), "fidelity: mask sizes differ");
  double truth_count = 0, restored_count = 0, overlap = 0;
  for (size_t i = 0; i < truth.size(); ++i) {
    truth_count += truth[i] ? 1 : 0;
    restored_count += restored[i] ? 1 : 0;
    overlap += (truth[i] && restored[i]) ? 1 : 0;
  }
  require(truth_count > 0, "fidelity: ground-truth mask is empty");
  Fidelity f;
  if (restored_count == 0) {
    f.empty_restored = true;
    return f;
  }
  f.precision = overlap / restored_count;
  f.recall = overlap / truth_count;
  if (f.precision + f.recall > 0) f.f1 = 2 * f.precision * f.recall / (f.precision + f.recall);
  return f;
}

std::string correctness_name(Correctness c) {
  switch (c) {
    case Correctness::Full: return "full";
    case Correctness::Partial: return "partial";
    case Correctness::WrongClass: return "wrong_class";
    case Correctness::Fail: return "fail";
  }
  return "?";
}

std::string correctness_symbol(Correctness c) {
  switch (c) {
    case Correctness::Full: return "●";       // ●
    case Correctness::Partial: return "◐";    // ◐
    case Correctness::WrongClass: return "⊖"; // ⊖
    case Correctness::Fail: return "○";       // ○
  }
  return "?";
}

Correctness assess_correctness(bool truly_infected, const std::vector<int>& true_targets,
                               const std::vector<int>& flagged) {
  if (!truly_infected) return flagged.empty() ? Correctness::Full : Correctness::Fail;
  require(!true_targets.empty(), "correctness: infected model with no target list");
  if (flagged.empty()) return Correctness::Fail;
  bool all_found = true;
  for (int t : true_targets)
    all_found = all_found && std::find(flagged.begin(), flagged.end(), t) != flagged.end();
  if (!all_found) return Correctness::WrongClass;
  return flagged.size() == true_targets.size() ? Correctness::Full : Correctness::Partial;
}

}  // namespace tabor
