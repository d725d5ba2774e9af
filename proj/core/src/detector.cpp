#include "tabor/detector.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "tabor/model_io.hpp"
#include "tabor/rng.hpp"

namespace tabor {

void DetectorConfig::validate() const {
  require(epochs >= 1, "detector: epoch budget must be at least 1");
  require(learning_rate > 0, "detector: learning rate must be positive");
  require(batch_size >= 1 && eval_batch_size >= 1, "detector: batch sizes must be positive");
  require(success_threshold > 0 && success_threshold < 1,
          "detector: success threshold must lie in (0,1)");
  require(step_multiplier > 1, "detector: step multiplier must exceed 1");
  require(stability_eps > 0, "detector: stability tolerance must be positive");
  require(min_stable_epochs >= 1, "detector: minimum stable epoch count must be positive");
  require(binarize_threshold > 0 && binarize_threshold < 1,
          "detector: binarize threshold must lie in (0,1)");
  for (double l : lambdas) require(l >= 0, "detector: negative regularizer weight");
  require(baseline_lambda >= 0, "detector: negative baseline weight");
}

double attack_success(const Network& net, const Tensor& batch, const std::vector<int>& labels,
                      const TriggerCandidate& cand) {
  require(batch.dim(0) == static_cast<int>(labels.size()),
          "attack_success: batch and labels out of step");
  Tensor stamped = apply_candidate(batch, cand.mask(), cand.pattern());
  std::vector<int> pred = argmax_rows(net.forward_logits(stamped));
  size_t considered = 0, hits = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == cand.target_class) continue;
    ++considered;
    if (pred[i] == cand.target_class) ++hits;
  }
  if (considered == 0) return 0.0;
  return static_cast<double>(hits) / static_cast<double>(considered);
}

SolveResult solve_for_target(const Network& net, const LabeledDataset& data, int target,
                             const DetectorConfig& cfg) {
  cfg.validate();
  data.validate();
  net.arch.validate();
  require(net.arch.num_classes == data.num_classes,
          "detector: network and dataset class counts differ");
  require(target >= 0 && target < data.num_classes,
          "detector: target class " + std::to_string(target) + " out of range");

  SolveResult res;
  res.candidate.target_class = target;

  // Clean evaluation pool; the solver never sees poisoned samples.
  std::vector<int> pool = data.test_indices();
  if (pool.empty()) pool = data.train_indices();
  if (pool.empty()) {
    res.error = "no clean samples available";
    return res;
  }

  const uint64_t class_seed = derive_seed(cfg.seed, 0xC1A55000ull + static_cast<uint64_t>(target));
  Rng eval_rng(derive_seed(class_seed, 0));
  Rng batch_rng(derive_seed(class_seed, 1));

  // Held-out success probe, drawn once; optimization batches come from the
  // remainder so the probe never trains the trigger.
  const int eval_n = std::min<int>(cfg.eval_batch_size, static_cast<int>(pool.size()));
  std::vector<int> eval_pick = eval_rng.sample(static_cast<int>(pool.size()), eval_n);
  std::vector<int> eval_idx, fit_pool;
  {
    std::vector<uint8_t> taken(pool.size(), 0);
    for (int p : eval_pick) taken[static_cast<size_t>(p)] = 1;
    for (size_t i = 0; i < pool.size(); ++i)
      (taken[i] ? eval_idx : fit_pool).push_back(pool[i]);
  }
  if (fit_pool.empty()) fit_pool = pool;
  Tensor eval_batch = make_batch<float>(data, eval_idx);
  std::vector<int> eval_labels = labels_of(data, eval_idx);

  const int h = data.height, w = data.width, c = data.channels;
  TapeT<float> tape;
  Tensor mask_logits = Tensor::full({h, w}, -3.0f);
  Tensor pattern_logits({h, w, c});
  tape.watch(mask_logits);
  tape.watch(pattern_logits);
  AdamConfig ac;
  ac.learning_rate = cfg.learning_rate;
  AdamT<float> adam({mask_logits, pattern_logits}, ac);

  std::array<double, 6> lambdas = cfg.lambdas;
  std::array<double, 4> prev_reg{};
  bool have_prev = false;

  try {
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      batch_rng.shuffle(fit_pool);
      std::vector<int> part(fit_pool.begin(),
                            fit_pool.begin() + std::min<size_t>(fit_pool.size(),
                                                                static_cast<size_t>(cfg.batch_size)));
      Tensor batch = make_batch<float>(data, part);
      ObjectiveTerms<float> terms = build_objective(net, batch, labels_of(data, part), target,
                                                    mask_logits, pattern_logits, cfg, lambdas);
      tape.backward(terms.objective);
      adam.step();
      adam.zero_grad();

      TriggerCandidate current{target, mask_logits.detach(), pattern_logits.detach()};
      double success = attack_success(net, eval_batch, eval_labels, current);

      SolveTracePoint tp;
      tp.epoch = epoch;
      tp.objective = terms.objective.item();
      tp.attack_success = success;
      for (int k = 0; k < 4; ++k) tp.reg[static_cast<size_t>(k)] = terms.reg[static_cast<size_t>(k)].item();
      res.trace.push_back(tp);
      res.epochs_run = epoch + 1;

      if (cfg.mode == DetectorConfig::Mode::Tabor) {
        // Success means the trigger still works: tighten every regularizer.
        // A broken trigger means we squeezed too hard: back off.
        double f = success >= cfg.success_threshold ? cfg.step_multiplier : 1.0 / cfg.step_multiplier;
        for (double& l : lambdas) l *= f;
      }

      bool stable = have_prev && success >= cfg.success_threshold &&
                    epoch + 1 >= cfg.min_stable_epochs;
      if (stable)
        for (int k = 0; k < 4; ++k)
          stable = stable && std::abs(tp.reg[static_cast<size_t>(k)] - prev_reg[static_cast<size_t>(k)]) <
                                 cfg.stability_eps;
      prev_reg = tp.reg;
      have_prev = true;
      if (stable && cfg.mode == DetectorConfig::Mode::Tabor) {
        res.converged = true;
        break;
      }
    }
  } catch (const Error& e) {
    res.error = e.what();
    return res;
  }

  res.candidate.mask_logits = mask_logits.detach();
  res.candidate.pattern_logits = pattern_logits.detach();
  res.final_lambdas = lambdas;
  return res;
}

std::map<int, SolveResult> scan_all_classes(const Network& net, const LabeledDataset& data,
                                            const DetectorConfig& cfg, int jobs) {
  require(jobs >= 1, "scan: jobs must be positive");
  const int classes = data.num_classes;
  std::vector<SolveResult> slots(static_cast<size_t>(classes));

  auto run_one = [&](int cls) {
    try {
      slots[static_cast<size_t>(cls)] = solve_for_target(net, data, cls, cfg);
    } catch (const Error& e) {
      slots[static_cast<size_t>(cls)].candidate.target_class = cls;
      slots[static_cast<size_t>(cls)].error = e.what();
    }
  };

  if (jobs == 1) {
    for (int cls = 0; cls < classes; ++cls) run_one(cls);
  } else {
    for (int start = 0; start < classes; start += jobs) {
      std::vector<std::thread> pool;
      for (int cls = start; cls < std::min(classes, start + jobs); ++cls)
        pool.emplace_back(run_one, cls);
      for (auto& t : pool) t.join();
    }
  }

  std::map<int, SolveResult> out;
  for (int cls = 0; cls < classes; ++cls) out[cls] = std::move(slots[static_cast<size_t>(cls)]);
  return out;
}

Network patch_unlearning(const Network& net, const TriggerCandidate& cand,
                         const LabeledDataset& data, const TrainConfig& cfg, double fraction) {
  data.validate();
  require(fraction > 0 && fraction <= 1, "patch: fraction must lie in (0,1]");
  {
    std::vector<uint8_t> fp = cand.binarized(0.01);
    bool any = false;
    for (uint8_t b : fp) any = any || b;
    require(any, "patch: nothing to patch, the candidate's binarized mask is empty");
  }
  Tensor mask = cand.mask();
  Tensor pattern = cand.pattern();
  require(mask.dim(0) == data.height && mask.dim(1) == data.width,
          "patch: candidate geometry does not match the dataset");

  std::vector<int> train_idx = data.train_indices();
  require(!train_idx.empty(), "patch: no training samples");
  const int n = static_cast<int>(std::floor(fraction * static_cast<double>(train_idx.size())));
  require(n >= 1, "patch: fraction yields zero samples");

  Rng rng(derive_seed(cfg.seed, 3));
  std::vector<int> picks = rng.sample(static_cast<int>(train_idx.size()), n);

  // Stamped copies that keep their true labels: the model learns that the
  // trigger means nothing.
  LabeledDataset aug = data;
  const auto& mv = mask.values();
  const auto& pv = pattern.values();
  const int c = data.channels;
  for (int p : picks) {
    int src = train_idx[static_cast<size_t>(p)];
    std::vector<float> img = data.images[static_cast<size_t>(src)];
    for (size_t pix = 0; pix < mv.size(); ++pix)
      for (int ch = 0; ch < c; ++ch) {
        size_t at = pix * static_cast<size_t>(c) + ch;
        img[at] = img[at] * (1.0f - mv[pix]) + pv[at] * mv[pix];
      }
    aug.push(std::move(img), data.labels[static_cast<size_t>(src)], SampleRole::TrainClean);
  }
  return train(net, aug, cfg);
}

void save_candidate(const TriggerCandidate& cand, const std::string& path,
                    const std::string& config) {
  require(cand.mask_logits.defined() && cand.pattern_logits.defined(),
          "candidate: nothing to save");
  const int h = cand.mask_logits.dim(0), w = cand.mask_logits.dim(1);
  const int c = cand.pattern_logits.dim(2);
  std::vector<NamedTensor> entries;
  entries.push_back({"meta/kind:candidate", {}, {0.0f}});
  entries.push_back({"meta/geometry",
                     {4},
                     {static_cast<float>(h), static_cast<float>(w), static_cast<float>(c),
                      static_cast<float>(cand.target_class)}});
  entries.push_back({"candidate/mask_logits", {h, w}, cand.mask_logits.values()});
  entries.push_back({"candidate/pattern_logits", {h, w, c}, cand.pattern_logits.values()});
  if (!config.empty()) entries.push_back({"meta/config:" + config, {}, {0.0f}});
  write_tensor_archive(path, entries);
}

TriggerCandidate load_candidate(const std::string& path) {
  std::vector<NamedTensor> entries = read_tensor_archive(path);
  const NamedTensor* kind = nullptr;
  const NamedTensor* geo = nullptr;
  const NamedTensor* mask = nullptr;
  const NamedTensor* pattern = nullptr;
  for (const auto& e : entries) {
    if (e.name == "meta/kind:candidate") kind = &e;
    else if (e.name == "meta/geometry") geo = &e;
    else if (e.name == "candidate/mask_logits") mask = &e;
    else if (e.name == "candidate/pattern_logits") pattern = &e;
  }
  if (!kind)
    throw IoError(IoCode::Malformed, "candidate: '" + path + "' is not a candidate archive");
  if (!geo || geo->data.size() != 4 || !mask || !pattern)
    throw IoError(IoCode::Malformed, "candidate: '" + path + "' is missing entries");
  TriggerCandidate cand;
  cand.target_class = static_cast<int>(geo->data[3]);
  if (mask->dims.size() != 2 || pattern->dims.size() != 3 || pattern->dims[0] != mask->dims[0] ||
      pattern->dims[1] != mask->dims[1])
    throw IoError(IoCode::Malformed, "candidate: '" + path + "' has inconsistent geometry");
  cand.mask_logits = Tensor(mask->dims, mask->data);
  cand.pattern_logits = Tensor(pattern->dims, pattern->data);
  return cand;
}

}  // namespace tabor
