#include <cmath>
#include <fstream>

#include <json.hpp>

#include "tabor/judge.hpp"

namespace tabor {
namespace {

using nlohmann::json;

// Infinity is not representable in JSON; the empty-footprint sentinel (and
// any other non-finite value) serializes as null.
json num_or_null(double v) {
  if (!std::isfinite(v)) return nullptr;
  return v;
}

double num_from(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::numeric_limits<double>::infinity();
  return j[key].get<double>();
}

}  // namespace

std::string report_to_json(const DetectionReport& report) {
  json j;
  j["tool"] = "tabor";
  j["format_version"] = 1;
  j["seed"] = report.seed;
  j["config"] = report.config;
  j["model"] = report.model_path;
  j["model_crc"] = report.model_crc;
  j["dataset"] = report.data_path;
  j["verdict"] = report.verdict;
  j["flagged"] = report.flagged;
  j["mad"] = {{"median", num_or_null(report.mad.median)},
              {"mad", num_or_null(report.mad.mad)},
              {"degenerate", report.mad.degenerate},
              {"error", report.mad.error}};
  json classes = json::array();
  for (const ClassReport& cr : report.classes) {
    json c;
    c["class"] = cr.class_id;
    c["error"] = cr.error;
    c["converged"] = cr.converged;
    c["epochs_run"] = cr.epochs_run;
    c["final_objective"] = num_or_null(cr.final_objective);
    c["final_lambdas"] = cr.final_lambdas;
    c["score"] = num_or_null(cr.quality.score);
    c["sparsity"] = cr.quality.sparsity;
    c["smoothness"] = cr.quality.smoothness;
    c["acc_att"] = cr.quality.acc_att;
    c["acc_crop"] = cr.quality.acc_crop;
    c["acc_exp"] = cr.quality.acc_exp;
    c["empty_footprint"] = cr.quality.empty_footprint;
    c["anomaly_index"] = num_or_null(cr.quality.anomaly_index);
    c["flagged"] = cr.quality.flagged;
    classes.push_back(std::move(c));
  }
  j["classes"] = std::move(classes);
  if (!report.correctness.empty()) j["correctness"] = report.correctness;
  if (!report.fidelity_f1.empty()) {
    json fid;
    for (const auto& [cls, f1] : report.fidelity_f1) {
      std::string key = std::to_string(cls);
      fid[key] = {{"precision", report.fidelity_precision.at(cls)},
                  {"recall", report.fidelity_recall.at(cls)},
                  {"f1", f1}};
    }
    j["fidelity"] = std::move(fid);
  }
  if (!report.artifacts.empty()) {
    json arts;
    for (const auto& [cls, refs] : report.artifacts)
      arts[std::to_string(cls)] = {{"trigger_png", refs.trigger_png},
                                   {"mask_png", refs.mask_png},
                                   {"candidate", refs.candidate}};
    j["artifacts"] = std::move(arts);
  }
  return j.dump(2) + "\n";
}

DetectionReport report_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(IoCode::Malformed, std::string("report: invalid JSON: ") + e.what());
  }
  if (!j.contains("tool") || j["tool"] != "tabor" || !j.contains("verdict"))
    throw IoError(IoCode::Malformed, "report: not a detection report");

  DetectionReport report;
  report.seed = j.value("seed", 0ull);
  report.config = j.value("config", "");
  report.model_path = j.value("model", "");
  report.model_crc = j.value("model_crc", "");
  report.data_path = j.value("dataset", "");
  report.verdict = j["verdict"].get<std::string>();
  if (j.contains("flagged")) report.flagged = j["flagged"].get<std::vector<int>>();
  if (j.contains("mad")) {
    const json& m = j["mad"];
    report.mad.median = num_from(m, "median");
    report.mad.mad = num_from(m, "mad");
    report.mad.degenerate = m.value("degenerate", false);
    report.mad.error = m.value("error", "");
  }
  if (j.contains("classes")) {
    for (const json& c : j["classes"]) {
      ClassReport cr;
      cr.class_id = c.value("class", 0);
      cr.error = c.value("error", "");
      cr.converged = c.value("converged", false);
      cr.epochs_run = c.value("epochs_run", 0);
      cr.final_objective = num_from(c, "final_objective");
      if (c.contains("final_lambdas")) {
        auto v = c["final_lambdas"].get<std::vector<double>>();
        for (size_t i = 0; i < v.size() && i < 6; ++i) cr.final_lambdas[i] = v[i];
      }
      cr.quality.class_id = cr.class_id;
      cr.quality.score = num_from(c, "score");
      cr.quality.sparsity = c.value("sparsity", 0.0);
      cr.quality.smoothness = c.value("smoothness", 0.0);
      cr.quality.acc_att = c.value("acc_att", 0.0);
      cr.quality.acc_crop = c.value("acc_crop", 0.0);
      cr.quality.acc_exp = c.value("acc_exp", 0.0);
      cr.quality.empty_footprint = c.value("empty_footprint", false);
      cr.quality.anomaly_index = num_from(c, "anomaly_index");
      cr.quality.flagged = c.value("flagged", false);
      report.classes.push_back(std::move(cr));
    }
  }
  report.correctness = j.value("correctness", "");
  if (j.contains("fidelity")) {
    for (const auto& [key, f] : j["fidelity"].items()) {
      int cls = std::stoi(key);
      report.fidelity_precision[cls] = f.value("precision", 0.0);
      report.fidelity_recall[cls] = f.value("recall", 0.0);
      report.fidelity_f1[cls] = f.value("f1", 0.0);
    }
  }
  if (j.contains("artifacts")) {
    for (const auto& [key, a] : j["artifacts"].items())
      report.artifacts[std::stoi(key)] = {a.value("trigger_png", ""), a.value("mask_png", ""),
                                          a.value("candidate", "")};
  }
  return report;
}

void write_report(const std::string& path, const DetectionReport& report) {
  std::ofstream f(path, std::ios::trunc);
  require(f.good(), "report: cannot open '" + path + "' for writing");
  f << report_to_json(report);
  require(f.good(), "report: short write to '" + path + "'");
}

DetectionReport read_report(const std::string& path) {
  std::ifstream f(path);
  if (!f.good()) throw Error("report: cannot open '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return report_from_json(text);
}

}  // namespace tabor
