#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tabor/detector.hpp"

namespace tabor {

struct JudgeConfig {
  double mad_threshold = 2.0;
  double binarize_threshold = 0.01;
  int eval_batch_size = 64;
  uint64_t seed = 0;
};

// Quality of one reconstructed trigger: the lower the score, the more the
// candidate looks like a real planted trigger (small, compact, effective).
// Components are recorded before flooring and before the log, so the score
// is recomputable from them via combine().
struct QualityScore {
  int class_id = 0;
  double score = 0;        // +infinity when the footprint is empty
  double sparsity = 0;     // footprint pixels / all pixels
  double smoothness = 0;   // footprint edge length / neighbour pair count
  double acc_att = 0;      // stamped images steered to the target
  double acc_crop = 0;     // accuracy on mask-cropped images
  double acc_exp = 0;      // target probability mass of the bare patch
  bool empty_footprint = false;
  double anomaly_index = 0;
  bool flagged = false;

  static double combine(double sparsity, double smoothness, double acc_att, double acc_crop,
                        double acc_exp);
};

struct MadInfo {
  double median = 0;
  double mad = 0;
  bool degenerate = false;  // zero spread: nothing can be flagged
  std::string error;        // set when the spread is inconsistently degenerate
};

// Median-absolute-deviation outlier flagging over the scores, in place.
// Only the low side is suspicious: a trigger that reconstructs unusually
// well marks its class as infected.  Needs at least three scores.
MadInfo mad_outliers(std::vector<QualityScore>& scores, double threshold);

QualityScore quality(const Network& net, const LabeledDataset& data, const TriggerCandidate& cand,
                     const JudgeConfig& cfg);

struct ClassReport {
  int class_id = 0;
  QualityScore quality;
  bool converged = false;
  int epochs_run = 0;
  double final_objective = 0;
  std::array<double, 6> final_lambdas{};
  std::string error;  // the solve failed; quality is meaningless
};

struct ArtifactRefs {
  std::string trigger_png;
  std::string mask_png;
  std::string candidate;  // archive with the raw logits, for patching
};

struct DetectionReport {
  std::string model_path;
  std::string model_crc;  // hex CRC32 of the model file, for cross-checking
  std::string data_path;
  uint64_t seed = 0;
  std::string config;  // provenance: the invocation that produced this
  std::string verdict;  // "clean" or "infected"
  std::vector<int> flagged;
  MadInfo mad;
  std::vector<ClassReport> classes;
  // Optional blocks, filled when ground truth / exports are available.
  std::string correctness;
  std::map<int, double> fidelity_precision, fidelity_recall, fidelity_f1;
  std::map<int, ArtifactRefs> artifacts;
};

// Scores every successful solve, flags outliers, and renders the verdict.
DetectionReport judge(const Network& net, const LabeledDataset& data,
                      const std::map<int, SolveResult>& scan, const JudgeConfig& cfg);

struct Fidelity {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  bool empty_restored = false;
};

// Pixel overlap between a restored binary mask and the planted ground truth.
// An empty ground truth is a caller bug; an empty restored mask just scores
// zero and is flagged as such.
Fidelity fidelity(const std::vector<uint8_t>& restored, const std::vector<uint8_t>& truth);

// How the verdict relates to what was actually planted.
enum class Correctness { Full, Partial, WrongClass, Fail };

std::string correctness_name(Correctness c);    // "full", "partial", ...
std::string correctness_symbol(Correctness c);  // the one-glyph table form

Correctness assess_correctness(bool truly_infected, const std::vector<int>& true_targets,
                               const std::vector<int>& flagged);

// JSON serialization of the report (whole-file read/write).
void write_report(const std::string& path, const DetectionReport& report);
DetectionReport read_report(const std::string& path);
std::string report_to_json(const DetectionReport& report);
DetectionReport report_from_json(const std::string& text);

}  // namespace tabor
