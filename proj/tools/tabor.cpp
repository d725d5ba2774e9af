// tabor — train, infect, inspect, evaluate and patch small image classifiers.
//
// Exit codes: 0 success / clean verdict, 1 runtime failure (e.g. an implant
// that never reaches its attack-success bar), 2 usage or precondition error,
// 3 infected verdict, 4 artifact format error.
//
// Progress and log lines go to stderr; stdout carries one machine-readable
// key=value line per command.  Every artifact embeds the flags and seed that
// produced it, so identical invocations reproduce identical bytes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tabor/judge.hpp"
#include "tabor/model_io.hpp"
#include "tabor/png_io.hpp"
#include "tabor/trigger.hpp"

namespace fs = std::filesystem;

namespace {

// A failure of the run itself (not of its invocation): exit code 1.
struct RunFailure : std::runtime_error {
  explicit RunFailure(const std::string& what) : std::runtime_error(what) {}
};

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

tabor::Corner corner_of(const std::string& pos) {
  if (pos == "tl") return tabor::Corner::TopLeft;
  if (pos == "tr") return tabor::Corner::TopRight;
  if (pos == "bl") return tabor::Corner::BottomLeft;
  if (pos == "br") return tabor::Corner::BottomRight;
  return tabor::parse_corner(pos);
}

std::string pos_name(tabor::Corner c) {
  switch (c) {
    case tabor::Corner::TopLeft: return "tl";
    case tabor::Corner::TopRight: return "tr";
    case tabor::Corner::BottomLeft: return "bl";
    case tabor::Corner::BottomRight: return "br";
  }
  return "?";
}

uint8_t quantize(float v) {
  return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

tabor::PngImage render_mask(const tabor::Tensor& mask) {
  tabor::PngImage img;
  img.height = mask.dim(0);
  img.width = mask.dim(1);
  img.channels = 1;
  img.pixels.reserve(mask.values().size());
  for (float v : mask.values()) img.pixels.push_back(quantize(v));
  return img;
}

tabor::PngImage render_trigger(const tabor::Tensor& mask, const tabor::Tensor& pattern) {
  tabor::PngImage img;
  img.height = mask.dim(0);
  img.width = mask.dim(1);
  img.channels = pattern.dim(2);
  const size_t c = static_cast<size_t>(img.channels);
  img.pixels.reserve(mask.values().size() * c);
  for (size_t i = 0; i < mask.values().size(); ++i)
    for (size_t ch = 0; ch < c; ++ch)
      img.pixels.push_back(quantize(mask.values()[i] * pattern.values()[i * c + ch]));
  return img;
}

// Fraction of non-target test images steered to the target once stamped.
double spec_attack(const tabor::Network& net, const tabor::LabeledDataset& data,
                   const tabor::TriggerSpec& spec) {
  std::vector<int> keep;
  for (int i : data.test_indices())
    if (data.labels[static_cast<size_t>(i)] != spec.target_class) keep.push_back(i);
  tabor::require(!keep.empty(), "attack measurement: no non-target test samples");
  const int h = data.height, w = data.width, c = data.channels;
  const size_t per = static_cast<size_t>(data.pixels_per_image());
  tabor::Tensor batch({static_cast<int>(keep.size()), h, w, c});
  auto& v = batch.values();
  for (size_t i = 0; i < keep.size(); ++i) {
    std::vector<float> img = tabor::stamp(data.images[static_cast<size_t>(keep[i])], h, w, c, spec);
    std::copy(img.begin(), img.end(), v.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  std::vector<int> pred = tabor::argmax_rows(net.forward_logits(batch));
  int hits = 0;
  for (int p : pred) hits += (p == spec.target_class) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

double candidate_attack(const tabor::Network& net, const tabor::LabeledDataset& data,
                        const tabor::TriggerCandidate& cand) {
  std::vector<int> idx = data.test_indices();
  if (idx.empty()) idx = data.train_indices();
  tabor::require(!idx.empty(), "attack measurement: dataset has no samples");
  tabor::Tensor batch = tabor::make_batch<float>(data, idx);
  return tabor::attack_success(net, batch, tabor::labels_of(data, idx), cand);
}

void progress(const std::string& line) { std::cerr << line << "\n"; }

// ---------------------------------------------------------------------------
// gen-data

struct GenOpts {
  int classes = 5;
  int per_class = 200;
  int size = 16;
  uint64_t seed = 0;
  std::string out;
  std::string from_dir;
};

std::string gen_config(const GenOpts& o) {
  std::ostringstream os;
  os << "gen-data";
  if (!o.from_dir.empty())
    os << " --from-dir " << o.from_dir;
  else
    os << " --classes " << o.classes << " --per-class " << o.per_class << " --size " << o.size
       << " --seed " << o.seed;
  return os.str();
}

int run_gen(const GenOpts& o) {
  tabor::LabeledDataset data;
  if (!o.from_dir.empty()) {
    progress("ingesting PNG tree " + o.from_dir);
    data = tabor::ingest_directory(o.from_dir);
  } else {
    progress("generating " + std::to_string(o.classes * o.per_class) + " synthetic samples");
    data = tabor::generate_synthetic(o.classes, o.per_class, o.size, o.seed);
  }
  tabor::write_dataset(data, o.out);

  // The pack format carries no free text, so provenance rides in a manifest
  // file next to it.
  std::ofstream mf(o.out + ".manifest", std::ios::binary);
  tabor::require(static_cast<bool>(mf), "gen-data: cannot open '" + o.out + ".manifest'");
  mf << "command=" << gen_config(o) << "\n"
     << "samples=" << data.size() << "\n"
     << "classes=" << data.num_classes << "\n"
     << "height=" << data.height << "\n"
     << "width=" << data.width << "\n"
     << "channels=" << data.channels << "\n"
     << "pack_crc32=" << tabor::artifact_crc32_hex(o.out) << "\n";
  mf.close();

  std::cout << "out=" << o.out << " samples=" << data.size() << " classes=" << data.num_classes
            << " geometry=" << data.height << "x" << data.width << "x" << data.channels << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train / infect

struct TrainOpts {
  std::string data;
  std::string out;
  std::string arch = "desk";
  int epochs = 40;
  double lr = 1e-2;
  int batch = 32;
  uint64_t seed = 0;
  uint64_t model_seed = 0;
  bool model_seed_set = false;
};

struct TriggerOpts {
  std::string shape = "square";
  std::string pos = "br";
  int size = 3;
  int target = 0;
  double value = 1.0;
  std::string stencil;  // PNG path for --shape bitmap
};

struct InfectOpts {
  TrainOpts train;
  TriggerOpts trig;
  std::string manifest;
  std::string dirty_out;
  std::string second;  // "shape:pos:size:target[:value]"
  double rate = 0.1;
  uint64_t poison_seed = 0;
  bool poison_seed_set = false;
  double min_success = 0.8;
};

tabor::Architecture make_arch(const std::string& desc, const tabor::LabeledDataset& data) {
  if (desc == "desk" || desc == "conv6") {
    tabor::require(data.height == data.width,
                   "arch '" + desc + "' expects square images, dataset is " +
                       std::to_string(data.height) + "x" + std::to_string(data.width));
    return desc == "desk"
               ? tabor::Architecture::desk(data.num_classes, data.height, data.channels)
               : tabor::Architecture::conv6(data.num_classes, data.height, data.channels);
  }
  return tabor::Architecture::parse(desc, data.height, data.width, data.channels,
                                    data.num_classes);
}

tabor::Network fit(const tabor::LabeledDataset& data, const TrainOpts& o) {
  tabor::Network init = tabor::Network::build(make_arch(o.arch, data), o.model_seed);
  tabor::TrainConfig tc;
  tc.epochs = o.epochs;
  tc.learning_rate = o.lr;
  tc.batch_size = o.batch;
  tc.seed = o.seed;
  progress("training " + std::to_string(o.epochs) + " epochs on " + std::to_string(data.size()) +
           " samples");
  return tabor::train(init, data, tc, [&](int epoch, double loss) {
    if (epoch % 10 == 9 || epoch + 1 == o.epochs)
      progress("  epoch " + std::to_string(epoch + 1) + "/" + std::to_string(o.epochs) +
               " loss=" + num(loss));
  });
}

std::string train_config(const TrainOpts& o) {
  std::ostringstream os;
  os << "--data " << o.data << " --arch " << o.arch << " --epochs " << o.epochs << " --lr "
     << num(o.lr) << " --batch " << o.batch << " --seed " << o.seed << " --model-seed "
     << o.model_seed;
  return os.str();
}

int run_train(TrainOpts o) {
  if (!o.model_seed_set) o.model_seed = o.seed;
  tabor::LabeledDataset data = tabor::read_dataset(o.data);
  tabor::Network net = fit(data, o);
  tabor::save_model(net, o.out, "train " + train_config(o));
  const double acc = tabor::accuracy(net, data, data.test_indices());
  std::cout << "out=" << o.out << " clean_acc=" << num(acc) << "\n";
  return 0;
}

tabor::TriggerSpec build_spec(const TriggerOpts& t, const tabor::LabeledDataset& data, int id) {
  tabor::Corner corner = corner_of(t.pos);
  tabor::TriggerSpec spec;
  if (t.shape == "square") {
    spec = tabor::TriggerSpec::square(t.size, corner, t.target, static_cast<float>(t.value),
                                      data.channels);
  } else if (t.shape == "swirl") {
    spec = tabor::TriggerSpec::swirl(t.size, corner, t.target, static_cast<float>(t.value),
                                     data.channels);
  } else if (t.shape == "bitmap") {
    tabor::require(!t.stencil.empty(), "infect: --shape bitmap needs --stencil <png>");
    tabor::PngImage img = tabor::read_png(t.stencil);
    tabor::require(img.height == img.width, "infect: bitmap stencil must be square, got " +
                                                std::to_string(img.width) + "x" +
                                                std::to_string(img.height));
    tabor::require(img.channels == data.channels || img.channels == 1,
                   "infect: stencil has " + std::to_string(img.channels) +
                       " channels, dataset wants " + std::to_string(data.channels));
    spec.corner = corner;
    spec.size = img.height;
    spec.channels = data.channels;
    spec.target_class = t.target;
    const size_t px = static_cast<size_t>(spec.size) * spec.size;
    spec.stencil.assign(px, 0);
    spec.pattern.assign(px * static_cast<size_t>(data.channels), 0.0f);
    for (size_t i = 0; i < px; ++i) {
      bool any = false;
      for (int ch = 0; ch < data.channels; ++ch) {
        const size_t src = i * static_cast<size_t>(img.channels) +
                           (img.channels == 1 ? 0 : static_cast<size_t>(ch));
        const float v = static_cast<float>(img.pixels[src]) / 255.0f;
        spec.pattern[i * static_cast<size_t>(data.channels) + static_cast<size_t>(ch)] = v;
        any = any || img.pixels[src] != 0;
      }
      spec.stencil[i] = any ? 1 : 0;
    }
  } else {
    throw tabor::Error("infect: unknown shape '" + t.shape + "'");
  }
  spec.id = id;
  spec.validate(data.height, data.width, data.channels, data.num_classes);
  return spec;
}

TriggerOpts parse_second(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ':');) parts.push_back(item);
  tabor::require(parts.size() == 4 || parts.size() == 5,
                 "infect: --second-trigger wants shape:pos:size:target[:value], got '" + text +
                     "'");
  TriggerOpts t;
  t.shape = parts[0];
  tabor::require(t.shape == "square" || t.shape == "swirl",
                 "infect: second trigger shape must be square or swirl");
  t.pos = parts[1];
  t.size = std::stoi(parts[2]);
  t.target = std::stoi(parts[3]);
  if (parts.size() == 5) t.value = std::stod(parts[4]);
  return t;
}

std::string trigger_config(const TriggerOpts& t) {
  std::ostringstream os;
  os << "--shape " << t.shape << " --pos " << t.pos;
  if (t.shape == "bitmap")
    os << " --stencil " << t.stencil;
  else
    os << " --size " << t.size;
  os << " --target " << t.target << " --value " << num(t.value);
  return os.str();
}

int run_infect(InfectOpts o) {
  if (!o.train.model_seed_set) o.train.model_seed = o.train.seed;
  if (!o.poison_seed_set) o.poison_seed = tabor::derive_seed(o.train.seed, 2);
  tabor::LabeledDataset clean = tabor::read_dataset(o.train.data);

  std::vector<tabor::TriggerSpec> specs;
  specs.push_back(build_spec(o.trig, clean, 0));
  if (!o.second.empty()) specs.push_back(build_spec(parse_second(o.second), clean, 1));

  tabor::LabeledDataset dirty = tabor::poison(clean, specs, o.rate, o.poison_seed);
  progress("poisoned " + std::to_string(dirty.size() - clean.size()) + " samples at rate " +
           num(o.rate));
  tabor::Network net = fit(dirty, o.train);

  const double acc = tabor::accuracy(net, clean, clean.test_indices());
  std::vector<double> attacks;
  for (const auto& s : specs) attacks.push_back(spec_attack(net, clean, s));
  for (size_t i = 0; i < attacks.size(); ++i) {
    progress("trigger " + std::to_string(i) + " (target " +
             std::to_string(specs[i].target_class) + "): attack=" + num(attacks[i]));
    if (attacks[i] < o.min_success)
      throw RunFailure("infect: trigger " + std::to_string(i) + " reached attack success " +
                       num(attacks[i]) + " < required " + num(o.min_success) +
                       "; nothing was written (raise --epochs/--rate or lower --min-success)");
  }

  std::ostringstream cfg;
  cfg << "infect " << train_config(o.train) << " " << trigger_config(o.trig);
  if (!o.second.empty()) cfg << " --second-trigger " << o.second;
  cfg << " --rate " << num(o.rate) << " --poison-seed " << o.poison_seed << " --min-success "
      << num(o.min_success);

  tabor::save_model(net, o.train.out, cfg.str());
  tabor::ManifestMeta meta;
  meta.model_crc = tabor::artifact_crc32_hex(o.train.out);
  meta.config = cfg.str();
  tabor::write_manifest(o.manifest, specs, meta);
  if (!o.dirty_out.empty()) tabor::write_dataset(dirty, o.dirty_out);

  std::cout << "out=" << o.train.out << " manifest=" << o.manifest << " clean_acc=" << num(acc);
  for (size_t i = 0; i < attacks.size(); ++i)
    std::cout << (i == 0 ? " attack=" : " second_attack=") << num(attacks[i]);
  std::cout << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// inspect

struct InspectOpts {
  std::string model;
  std::string data;
  std::string out;
  std::string mode = "tabor";
  int jobs = 1;
  double threshold = 2.0;
  tabor::DetectorConfig det;  // epochs/lr/lambdas/… bound straight to flags
};

std::string inspect_config(const InspectOpts& o) {
  std::ostringstream os;
  os << "inspect --model " << o.model << " --data " << o.data << " --mode " << o.mode
     << " --epochs " << o.det.epochs << " --lr " << num(o.det.learning_rate) << " --batch "
     << o.det.batch_size << " --eval-batch " << o.det.eval_batch_size << " --phi "
     << num(o.det.success_threshold) << " --multiplier " << num(o.det.step_multiplier)
     << " --stability-eps " << num(o.det.stability_eps) << " --min-stable "
     << o.det.min_stable_epochs << " --binarize " << num(o.det.binarize_threshold);
  for (size_t i = 0; i < o.det.lambdas.size(); ++i)
    os << " --lambda" << (i + 1) << " " << num(o.det.lambdas[i]);
  os << " --baseline-lambda " << num(o.det.baseline_lambda) << " --threshold "
     << num(o.threshold) << " --seed " << o.det.seed;
  return os.str();
}

int run_inspect(InspectOpts o) {
  o.det.mode = o.mode == "neural-cleanse" ? tabor::DetectorConfig::Mode::MaskOnly
                                          : tabor::DetectorConfig::Mode::Tabor;
  tabor::Network net = tabor::load_model(o.model);
  tabor::LabeledDataset data = tabor::read_dataset(o.data);
  tabor::require(data.num_classes == net.arch.num_classes,
                 "inspect: dataset has " + std::to_string(data.num_classes) +
                     " classes, model expects " + std::to_string(net.arch.num_classes));

  progress("scanning " + std::to_string(data.num_classes) + " classes (mode " + o.mode +
           ", jobs " + std::to_string(o.jobs) + ")");
  std::map<int, tabor::SolveResult> scan = tabor::scan_all_classes(net, data, o.det, o.jobs);
  for (const auto& [cls, res] : scan)
    progress("  class " + std::to_string(cls) + ": " +
             (res.error.empty()
                  ? "epochs=" + std::to_string(res.epochs_run) + " success=" +
                        num(res.trace.empty() ? 0.0 : res.trace.back().attack_success)
                  : "error: " + res.error));

  tabor::JudgeConfig jc;
  jc.mad_threshold = o.threshold;
  jc.binarize_threshold = o.det.binarize_threshold;
  jc.eval_batch_size = o.det.eval_batch_size;
  jc.seed = o.det.seed;
  tabor::DetectionReport report = tabor::judge(net, data, scan, jc);

  report.model_path = o.model;
  report.model_crc = tabor::artifact_crc32_hex(o.model);
  report.data_path = o.data;
  report.seed = o.det.seed;
  report.config = inspect_config(o);

  fs::create_directories(o.out);
  for (int cls : report.flagged) {
    const tabor::TriggerCandidate& cand = scan.at(cls).candidate;
    tabor::ArtifactRefs refs;
    refs.trigger_png = "class_" + std::to_string(cls) + "_trigger.png";
    refs.mask_png = "class_" + std::to_string(cls) + "_mask.png";
    refs.candidate = "class_" + std::to_string(cls) + "_candidate.tbrm";
    tabor::Tensor mask = cand.mask();
    tabor::Tensor pattern = cand.pattern();
    tabor::write_png((fs::path(o.out) / refs.trigger_png).string(),
                     render_trigger(mask, pattern), report.config);
    tabor::write_png((fs::path(o.out) / refs.mask_png).string(), render_mask(mask),
                     report.config);
    tabor::save_candidate(cand, (fs::path(o.out) / refs.candidate).string(), report.config);
    report.artifacts[cls] = refs;
  }
  const std::string report_path = (fs::path(o.out) / "report.json").string();
  tabor::write_report(report_path, report);

  std::cout << "report=" << report_path << " verdict=" << report.verdict << " flagged=";
  for (size_t i = 0; i < report.flagged.size(); ++i)
    std::cout << (i ? "," : "") << report.flagged[i];
  if (report.flagged.empty()) std::cout << "-";
  std::cout << "\n";
  return report.verdict == "infected" ? 3 : 0;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvalOpts {
  std::string report;
  std::string manifest;
  bool update_report = false;
  // grid mode
  bool grid = false;
  std::string data;
  std::string out;
  std::string shapes = "square";
  std::vector<int> sizes{3, 4, 5};
  std::vector<std::string> positions{"tl", "tr", "bl", "br"};
  int target = 0;
  double rate = 0.1;
  double min_success = 0.8;
  TrainOpts train;  // data/out unused; arch + epochs/lr/batch/seeds drive cell training
  InspectOpts det;  // detector settings for the per-cell solves
};

int run_eval_single(EvalOpts& o) {
  tabor::DetectionReport report = tabor::read_report(o.report);
  tabor::ManifestMeta meta;
  std::vector<tabor::TriggerSpec> specs = tabor::read_manifest(o.manifest, &meta);
  if (!meta.model_crc.empty() && !report.model_crc.empty() && meta.model_crc != report.model_crc)
    throw tabor::Error("evaluate: model-id mismatch: report comes from model crc " +
                       report.model_crc + ", manifest records " + meta.model_crc);

  std::map<int, const tabor::TriggerSpec*> planted;
  std::vector<int> true_targets;
  for (const auto& s : specs) {
    planted[s.target_class] = &s;
    true_targets.push_back(s.target_class);
  }

  const fs::path report_dir = fs::path(o.report).parent_path();
  for (int cls : report.flagged) {
    auto spec_it = planted.find(cls);
    if (spec_it == planted.end()) {
      std::cout << "class=" << cls << " planted=none\n";
      continue;
    }
    auto art = report.artifacts.find(cls);
    tabor::require(art != report.artifacts.end() && !art->second.candidate.empty(),
                   "evaluate: report has no candidate archive for flagged class " +
                       std::to_string(cls));
    tabor::TriggerCandidate cand =
        tabor::load_candidate((report_dir / art->second.candidate).string());
    std::vector<uint8_t> restored = cand.binarized(o.det.det.binarize_threshold);
    std::vector<uint8_t> truth = tabor::truth_mask(*spec_it->second, cand.mask_logits.dim(0),
                                                   cand.mask_logits.dim(1));
    tabor::Fidelity fid = tabor::fidelity(restored, truth);
    report.fidelity_precision[cls] = fid.precision;
    report.fidelity_recall[cls] = fid.recall;
    report.fidelity_f1[cls] = fid.f1;
    std::cout << "class=" << cls << " precision=" << num(fid.precision)
              << " recall=" << num(fid.recall) << " f1=" << num(fid.f1) << "\n";
  }

  tabor::Correctness c =
      tabor::assess_correctness(!specs.empty(), true_targets, report.flagged);
  report.correctness = tabor::correctness_name(c);
  std::cout << "verdict=" << report.verdict << " correctness=" << tabor::correctness_name(c)
            << " symbol=" << tabor::correctness_symbol(c) << "\n";

  if (o.update_report) tabor::write_report(o.report, report);
  return 0;
}

int run_eval_grid(EvalOpts& o) {
  tabor::require(!o.data.empty(), "evaluate: grid mode needs --data");
  tabor::require(!o.out.empty(), "evaluate: grid mode needs --out");
  if (!o.train.model_seed_set) o.train.model_seed = o.train.seed;
  tabor::LabeledDataset clean = tabor::read_dataset(o.data);

  std::vector<std::string> shapes;
  {
    std::stringstream ss(o.shapes);
    for (std::string item; std::getline(ss, item, ',');) shapes.push_back(item);
  }

  std::ostringstream cfg;
  cfg << "evaluate --grid --data " << o.data << " --shapes " << o.shapes << " --sizes ";
  for (size_t i = 0; i < o.sizes.size(); ++i) cfg << (i ? "," : "") << o.sizes[i];
  cfg << " --positions ";
  for (size_t i = 0; i < o.positions.size(); ++i) cfg << (i ? "," : "") << o.positions[i];
  cfg << " --target " << o.target << " --rate " << num(o.rate) << " --train-epochs "
      << o.train.epochs << " --train-lr " << num(o.train.lr) << " --train-batch "
      << o.train.batch << " --train-seed " << o.train.seed << " --model-seed "
      << o.train.model_seed << " --epochs " << o.det.det.epochs << " --lr "
      << num(o.det.det.learning_rate) << " --seed " << o.det.det.seed;

  std::ofstream tsv(o.out, std::ios::binary);
  tabor::require(static_cast<bool>(tsv), "evaluate: cannot open '" + o.out + "'");
  tsv << "# " << cfg.str() << "\n";
  tsv << "shape\tsize\tcorner\ttarget\tattack\tcorrectness\tf1\tf1_baseline\n";

  tabor::JudgeConfig jc;
  jc.mad_threshold = o.det.threshold;
  jc.binarize_threshold = o.det.det.binarize_threshold;
  jc.eval_batch_size = o.det.det.eval_batch_size;
  jc.seed = o.det.det.seed;

  int rows = 0;
  for (const std::string& shape : shapes)
    for (int size : o.sizes)
      for (const std::string& pos : o.positions) {
        TriggerOpts t;
        t.shape = shape;
        t.pos = pos;
        t.size = size;
        t.target = o.target;
        tabor::TriggerSpec spec = build_spec(t, clean, 0);
        tabor::LabeledDataset dirty =
            tabor::poison(clean, {spec}, o.rate, tabor::derive_seed(o.train.seed, 2));
        progress("cell " + shape + "/" + std::to_string(size) + "/" + pos + ": training");
        TrainOpts cell_train = o.train;
        tabor::Network init = tabor::Network::build(make_arch(cell_train.arch, clean),
                                                    cell_train.model_seed);
        tabor::TrainConfig tc;
        tc.epochs = cell_train.epochs;
        tc.learning_rate = cell_train.lr;
        tc.batch_size = cell_train.batch;
        tc.seed = cell_train.seed;
        tabor::Network net = tabor::train(init, dirty, tc);
        const double attack = spec_attack(net, clean, spec);

        progress("cell " + shape + "/" + std::to_string(size) + "/" + pos + ": scanning");
        tabor::DetectorConfig det = o.det.det;
        det.mode = tabor::DetectorConfig::Mode::Tabor;
        std::map<int, tabor::SolveResult> scan = tabor::scan_all_classes(net, dirty, det);
        tabor::DetectionReport rep = tabor::judge(net, dirty, scan, jc);
        tabor::Correctness corr =
            tabor::assess_correctness(true, {o.target}, rep.flagged);

        std::vector<uint8_t> truth = tabor::truth_mask(spec, clean.height, clean.width);
        auto cell_f1 = [&](const tabor::SolveResult& res) {
          if (!res.error.empty()) return 0.0;
          return tabor::fidelity(res.candidate.binarized(det.binarize_threshold), truth).f1;
        };
        const double f1 = cell_f1(scan.at(o.target));

        tabor::DetectorConfig base = det;
        base.mode = tabor::DetectorConfig::Mode::MaskOnly;
        const double f1_base = cell_f1(tabor::solve_for_target(net, dirty, o.target, base));

        tsv << shape << "\t" << size << "\t" << pos << "\t" << o.target << "\t" << num(attack)
            << "\t" << tabor::correctness_name(corr) << "\t" << num(f1) << "\t" << num(f1_base)
            << "\n";
        ++rows;
      }
  tsv.close();
  std::cout << "out=" << o.out << " rows=" << rows << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// patch

struct PatchOpts {
  std::string model;
  std::string data;
  std::string out;
  std::string report;
  int cls = -1;
  std::string trigger;
  int epochs = 30;
  double lr = 1e-3;
  int batch = 32;
  double fraction = 0.2;
  uint64_t seed = 0;
};

int run_patch(const PatchOpts& o) {
  tabor::Network net = tabor::load_model(o.model);
  tabor::LabeledDataset data = tabor::read_dataset(o.data);

  std::string cand_path = o.trigger;
  if (cand_path.empty()) {
    tabor::require(!o.report.empty(),
                   "patch: need a trigger source: --trigger <candidate> or --report <json>");
    tabor::DetectionReport report = tabor::read_report(o.report);
    tabor::require(!report.flagged.empty(),
                   "patch: report flags no class and no --trigger was given");
    const int cls = o.cls >= 0 ? o.cls : report.flagged.front();
    auto art = report.artifacts.find(cls);
    tabor::require(art != report.artifacts.end() && !art->second.candidate.empty(),
                   "patch: report has no candidate archive for class " + std::to_string(cls));
    cand_path = (fs::path(o.report).parent_path() / art->second.candidate).string();
  }
  tabor::TriggerCandidate cand = tabor::load_candidate(cand_path);

  const double before_attack = candidate_attack(net, data, cand);
  const double before_acc = tabor::accuracy(net, data, data.test_indices());

  std::ostringstream cfg;
  cfg << "patch --model " << o.model << " --data " << o.data << " --trigger " << cand_path
      << " --epochs " << o.epochs << " --lr " << num(o.lr) << " --batch " << o.batch
      << " --fraction " << num(o.fraction) << " --seed " << o.seed;

  if (o.epochs == 0) {
    // A zero-epoch patch is a no-op; hand back the exact artifact.
    fs::copy_file(o.model, o.out, fs::copy_options::overwrite_existing);
    std::cout << "out=" << o.out << " before_attack=" << num(before_attack)
              << " after_attack=" << num(before_attack) << " before_acc=" << num(before_acc)
              << " after_acc=" << num(before_acc) << "\n";
    return 0;
  }

  tabor::TrainConfig ft;
  ft.epochs = o.epochs;
  ft.learning_rate = o.lr;
  ft.batch_size = o.batch;
  ft.seed = o.seed;
  progress("unlearning for " + std::to_string(o.epochs) + " epochs, fraction " +
           num(o.fraction));
  tabor::Network patched = tabor::patch_unlearning(net, cand, data, ft, o.fraction);
  tabor::save_model(patched, o.out, cfg.str());

  const double after_attack = candidate_attack(patched, data, cand);
  const double after_acc = tabor::accuracy(patched, data, data.test_indices());
  std::cout << "out=" << o.out << " before_attack=" << num(before_attack)
            << " after_attack=" << num(after_attack) << " before_acc=" << num(before_acc)
            << " after_acc=" << num(after_acc) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tabor: backdoor implanting, scanning and patching for small classifiers"};
  app.require_subcommand(1);
  app.set_config("--config", "",
                 "key=value file supplying any flag (sections name subcommands); "
                 "command-line flags win");
  app.footer(
      "Exit codes: 0 success/clean, 1 run failure, 2 usage error, 3 infected verdict,\n"
      "4 artifact format error.");

  int rc = 0;

  GenOpts gen;
  CLI::App* cg = app.add_subcommand("gen-data", "Write a synthetic or ingested dataset pack");
  cg->fallthrough();
  cg->add_option("--classes", gen.classes, "Number of classes")->check(CLI::PositiveNumber);
  cg->add_option("--per-class", gen.per_class, "Samples per class")->check(CLI::PositiveNumber);
  cg->add_option("--size", gen.size, "Image side length")->check(CLI::PositiveNumber);
  cg->add_option("--seed", gen.seed, "Generator seed");
  cg->add_option("--out", gen.out, "Output pack path")->required();
  cg->add_option("--from-dir", gen.from_dir, "Ingest a per-class PNG directory tree instead");
  cg->callback([&] { rc = run_gen(gen); });

  TrainOpts tr;
  CLI::App* ct = app.add_subcommand("train", "Train a clean classifier");
  ct->fallthrough();
  auto add_train_flags = [](CLI::App* c, TrainOpts& t) {
    c->add_option("--data", t.data, "Dataset pack")->required();
    c->add_option("--out", t.out, "Output model path")->required();
    c->add_option("--arch", t.arch, "desk, conv6 or a layer list like 'conv8,relu,...'");
    c->add_option("--epochs", t.epochs, "Training epochs")->check(CLI::NonNegativeNumber);
    c->add_option("--lr", t.lr, "Learning rate")->check(CLI::PositiveNumber);
    c->add_option("--batch", t.batch, "Batch size")->check(CLI::PositiveNumber);
    c->add_option("--seed", t.seed, "Training seed");
    c->add_option("--model-seed", t.model_seed, "Weight init seed (defaults to --seed)")
        ->each([&t](const std::string&) { t.model_seed_set = true; });
  };
  add_train_flags(ct, tr);
  ct->callback([&] { rc = run_train(tr); });

  InfectOpts inf;
  CLI::App* ci = app.add_subcommand("infect", "Poison a dataset and train a backdoored model");
  ci->fallthrough();
  add_train_flags(ci, inf.train);
  ci->add_option("--manifest", inf.manifest, "Ground-truth trigger manifest to write")
      ->required();
  ci->add_option("--shape", inf.trig.shape, "square, swirl or bitmap")
      ->check(CLI::IsMember({"square", "swirl", "bitmap"}));
  ci->add_option("--pos", inf.trig.pos, "Corner: tl, tr, bl or br")
      ->check(CLI::IsMember({"tl", "tr", "bl", "br", "top-left", "top-right", "bottom-left",
                             "bottom-right"}));
  ci->add_option("--size", inf.trig.size, "Patch side length")->check(CLI::PositiveNumber);
  ci->add_option("--target", inf.trig.target, "Class the trigger hijacks")
      ->check(CLI::NonNegativeNumber);
  ci->add_option("--value", inf.trig.value, "Patch intensity in [0,1]");
  ci->add_option("--stencil", inf.trig.stencil, "PNG stencil for --shape bitmap");
  ci->add_option("--second-trigger", inf.second,
                 "Extra trigger as shape:pos:size:target[:value]");
  ci->add_option("--rate", inf.rate, "Poisoning rate")->check(CLI::PositiveNumber);
  ci->add_option("--poison-seed", inf.poison_seed, "Sampling seed (defaults derived of --seed)")
      ->each([&inf](const std::string&) { inf.poison_seed_set = true; });
  ci->add_option("--min-success", inf.min_success,
                 "Refuse to write a model whose attack success is below this");
  ci->add_option("--dirty-out", inf.dirty_out, "Also write the poisoned pack here");
  ci->callback([&] { rc = run_infect(inf); });

  InspectOpts ins;
  CLI::App* cn = app.add_subcommand("inspect", "Scan a model for backdoors and write a report");
  cn->fallthrough();
  auto add_detector_flags = [](CLI::App* c, InspectOpts& i) {
    c->add_option("--epochs", i.det.epochs, "Solver steps per class")
        ->check(CLI::PositiveNumber);
    c->add_option("--lr", i.det.learning_rate, "Solver learning rate")
        ->check(CLI::PositiveNumber);
    c->add_option("--batch", i.det.batch_size, "Solver batch size")->check(CLI::PositiveNumber);
    c->add_option("--eval-batch", i.det.eval_batch_size, "Success-probe batch size")
        ->check(CLI::PositiveNumber);
    c->add_option("--phi", i.det.success_threshold, "Attack-success threshold φ");
    c->add_option("--multiplier", i.det.step_multiplier, "Per-epoch weight adjustment factor");
    c->add_option("--stability-eps", i.det.stability_eps, "Plateau tolerance");
    c->add_option("--min-stable", i.det.min_stable_epochs, "Earliest epoch the plateau counts");
    c->add_option("--binarize", i.det.binarize_threshold, "Footprint threshold τ");
    for (size_t k = 0; k < i.det.lambdas.size(); ++k)
      c->add_option("--lambda" + std::to_string(k + 1), i.det.lambdas[k],
                    "Regularizer weight " + std::to_string(k + 1));
    c->add_option("--baseline-lambda", i.det.baseline_lambda, "neural-cleanse mask weight");
    c->add_option("--threshold", i.threshold, "Anomaly-index flag threshold");
    c->add_option("--seed", i.det.seed, "Detection seed");
  };
  cn->add_option("--model", ins.model, "Model archive to scan")->required();
  cn->add_option("--data", ins.data, "Dataset pack")->required();
  cn->add_option("--out", ins.out, "Output directory for report and artifacts")->required();
  cn->add_option("--mode", ins.mode, "tabor or neural-cleanse")
      ->check(CLI::IsMember({"tabor", "neural-cleanse"}));
  cn->add_option("--jobs", ins.jobs, "Parallel per-class solves")->check(CLI::PositiveNumber);
  add_detector_flags(cn, ins);
  cn->callback([&] { rc = run_inspect(ins); });

  EvalOpts ev;
  CLI::App* ce = app.add_subcommand(
      "evaluate", "Score a report against ground truth, or sweep a trigger grid");
  ce->fallthrough();
  CLI::Option* oe_rep = ce->add_option("--report", ev.report, "Detection report JSON");
  CLI::Option* oe_man = ce->add_option("--manifest", ev.manifest, "Ground-truth manifest");
  ce->add_flag("--update-report", ev.update_report,
               "Write correctness and fidelity back into the report");
  CLI::Option* oe_grid = ce->add_flag("--grid", ev.grid, "Grid mode: sweep shape/size/corner");
  ce->add_option("--data", ev.data, "Clean dataset pack (grid mode)");
  ce->add_option("--out", ev.out, "Summary TSV path (grid mode)");
  ce->add_option("--shapes", ev.shapes, "Comma-separated shapes (grid mode)");
  ce->add_option("--sizes", ev.sizes, "Trigger sizes (grid mode)")->delimiter(',');
  ce->add_option("--positions", ev.positions, "Corners (grid mode)")->delimiter(',');
  ce->add_option("--target", ev.target, "Planted target class (grid mode)");
  ce->add_option("--rate", ev.rate, "Poisoning rate (grid mode)");
  ce->add_option("--train-epochs", ev.train.epochs, "Per-cell training epochs (grid mode)");
  ce->add_option("--train-lr", ev.train.lr, "Per-cell training learning rate (grid mode)");
  ce->add_option("--train-batch", ev.train.batch, "Per-cell training batch (grid mode)");
  ce->add_option("--train-seed", ev.train.seed, "Per-cell training seed (grid mode)");
  ce->add_option("--model-seed", ev.train.model_seed, "Per-cell weight init seed (grid mode)")
      ->each([&ev](const std::string&) { ev.train.model_seed_set = true; });
  ce->add_option("--arch", ev.train.arch, "Per-cell architecture (grid mode)");
  add_detector_flags(ce, ev.det);
  oe_rep->excludes(oe_grid);
  oe_man->excludes(oe_grid);
  ce->callback([&] {
    if (ev.grid) {
      rc = run_eval_grid(ev);
    } else {
      tabor::require(!ev.report.empty() && !ev.manifest.empty(),
                     "evaluate: need --report and --manifest, or --grid");
      rc = run_eval_single(ev);
    }
  });

  PatchOpts pa;
  CLI::App* cp = app.add_subcommand("patch", "Unlearn a recovered trigger from a model");
  cp->fallthrough();
  cp->add_option("--model", pa.model, "Model archive to patch")->required();
  cp->add_option("--data", pa.data, "Clean dataset pack for fine-tuning")->required();
  cp->add_option("--out", pa.out, "Patched model path")->required();
  cp->add_option("--report", pa.report, "Detection report supplying the trigger");
  cp->add_option("--class", pa.cls, "Flagged class to patch (default: first flagged)");
  cp->add_option("--trigger", pa.trigger, "Explicit candidate archive (overrides --report)");
  cp->add_option("--epochs", pa.epochs, "Fine-tune epochs (0 copies the model unchanged)")
      ->check(CLI::NonNegativeNumber);
  cp->add_option("--lr", pa.lr, "Fine-tune learning rate")->check(CLI::PositiveNumber);
  cp->add_option("--batch", pa.batch, "Fine-tune batch size")->check(CLI::PositiveNumber);
  cp->add_option("--fraction", pa.fraction, "Share of training samples stamped");
  cp->add_option("--seed", pa.seed, "Fine-tune seed");
  cp->callback([&] { rc = run_patch(pa); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const tabor::IoError& e) {
    std::cerr << "tabor: " << e.what() << "\n";
    return 4;
  } catch (const RunFailure& e) {
    std::cerr << "tabor: " << e.what() << "\n";
    return 1;
  } catch (const tabor::Error& e) {
    std::cerr << "tabor: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "tabor: " << e.what() << "\n";
    return 1;
  }
  return rc;
}
