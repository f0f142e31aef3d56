#pragma once

#include <algorithm>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssldet/box.hpp"
#include "ssldet/common.hpp"

namespace ssldet {

struct PredictionRecord {
  std::string record_id;
  std::vector<double> logits;
  Box4 pred_box{};
  int target = 0;
  BoundingBox target_box;
};

inline double mean_iou(const std::vector<PredictionRecord>& preds) {
  if (preds.empty()) throw ContractError("mean_iou: empty prediction list");
  double acc = 0.0;
  for (const auto& p : preds) acc += iou(p.pred_box, p.target_box);
  return acc / static_cast<double>(preds.size());
}

// Strict inequality: a record counts only if IoU > threshold.
inline double loc_accuracy(const std::vector<PredictionRecord>& preds,
                           double threshold) {
  if (preds.empty()) throw ContractError("loc_accuracy: empty prediction list");
  if (!(threshold > 0.0 && threshold < 1.0))
    throw ContractError("loc_accuracy: threshold must be in (0,1)");
  std::size_t hits = 0;
  for (const auto& p : preds)
    if (iou(p.pred_box, p.target_box) > threshold) ++hits;
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

// Logit ties break by ascending class index.
inline double topn_accuracy(const std::vector<PredictionRecord>& preds, int n) {
  if (preds.empty()) throw ContractError("topn_accuracy: empty prediction list");
  if (n <= 0) throw ContractError("topn_accuracy: N must be positive");
  std::size_t hits = 0;
  for (const auto& p : preds) {
    const int k = static_cast<int>(p.logits.size());
    if (n > k) throw ContractError("topn_accuracy: N exceeds class count");
    const double t = p.logits[p.target];
    int rank = 1;
    for (int j = 0; j < k; ++j) {
      if (j == p.target) continue;
      if (p.logits[j] > t || (p.logits[j] == t && j < p.target)) ++rank;
    }
    if (rank <= n) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

// ---------------------------------------------------------------------------

struct ReportContext {
  std::string dataset;  // TINY | FULL | synthetic ...
  std::string method;   // baseline | ssl | random
  int n_per_class = 0;
  std::int64_t seed = 0;
};

// The metric bundle of one table row.
struct EvalReport {
  int n_per_class = 0;
  std::string method;
  std::string dataset;
  std::int64_t seed = 0;
  double top1 = 0.0;
  double top3 = 0.0;
  std::optional<double> top5;
  double mean_iou = 0.0;
  double acc_iou_05 = 0.0;
  double acc_iou_07 = 0.0;

  void validate() const {
    if (dataset.empty() || method.empty())
      throw ContractError("eval report: empty context tags");
    auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!in01(top1) || !in01(top3) || (top5 && !in01(*top5)) ||
        !in01(mean_iou) || !in01(acc_iou_05) || !in01(acc_iou_07))
      throw ContractError("eval report: metric outside [0,1]");
    if (acc_iou_07 > acc_iou_05 + 1e-12)
      throw ContractError("eval report: acc_iou_07 exceeds acc_iou_05");
  }
};

inline EvalReport build_report(const std::vector<PredictionRecord>& preds,
                               const ReportContext& ctx) {
  if (preds.empty()) throw ContractError("build_report: empty prediction list");
  if (ctx.dataset.empty() || ctx.method.empty())
    throw ContractError("build_report: empty context tags");
  const int k = static_cast<int>(preds.front().logits.size());

  EvalReport r;
  r.n_per_class = ctx.n_per_class;
  r.method = ctx.method;
  r.dataset = ctx.dataset;
  r.seed = ctx.seed;
  r.top1 = topn_accuracy(preds, 1);
  r.top3 = k >= 3 ? topn_accuracy(preds, 3) : 1.0;
  if (k > 5) r.top5 = topn_accuracy(preds, 5);
  r.mean_iou = mean_iou(preds);
  r.acc_iou_05 = loc_accuracy(preds, 0.5);
  r.acc_iou_07 = loc_accuracy(preds, 0.7);
  r.validate();
  return r;
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  j["n_per_class"] = r.n_per_class;
  j["method"] = r.method;
  j["dataset"] = r.dataset;
  j["seed"] = r.seed;
  j["top1"] = r.top1;
  j["top3"] = r.top3;
  if (r.top5) j["top5"] = *r.top5;
  j["mean_iou"] = r.mean_iou;
  j["acc_iou_05"] = r.acc_iou_05;
  j["acc_iou_07"] = r.acc_iou_07;
  j["loc_accuracy_inequality"] = "strict";
  return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.n_per_class = j.at("n_per_class").get<int>();
  r.method = j.at("method").get<std::string>();
  r.dataset = j.at("dataset").get<std::string>();
  r.seed = j.at("seed").get<std::int64_t>();
  r.top1 = j.at("top1").get<double>();
  r.top3 = j.at("top3").get<double>();
  if (j.contains("top5")) r.top5 = j["top5"].get<double>();
  r.mean_iou = j.at("mean_iou").get<double>();
  r.acc_iou_05 = j.at("acc_iou_05").get<double>();
  r.acc_iou_07 = j.at("acc_iou_07").get<double>();
  r.validate();
  return r;
}

// CSV row matching the table column order.
inline std::string report_csv_header(bool with_top5) {
  return with_top5 ? "n,method,top1,top3,top5,mean_iou,acc_iou_05,acc_iou_07"
                   : "n,method,top1,top3,mean_iou,acc_iou_05,acc_iou_07";
}

inline std::string report_csv_row(const EvalReport& r) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << r.n_per_class << "," << r.method << "," << r.top1 << "," << r.top3;
  if (r.top5) os << "," << *r.top5;
  os << "," << r.mean_iou << "," << r.acc_iou_05 << "," << r.acc_iou_07;
  return os.str();
}

// ---------------------------------------------------------------------------
// Two-method comparison over the n grid.

struct MetricDiff {
  int n_per_class = 0;
  // ssl minus baseline, keyed in table column order.
  std::vector<std::pair<std::string, double>> diffs;
};

inline const std::vector<std::string>& metric_names(bool with_top5) {
  static const std::vector<std::string> base = {"top1", "top3", "mean_iou",
                                                "acc_iou_05", "acc_iou_07"};
  static const std::vector<std::string> full = {
      "top1", "top3", "top5", "mean_iou", "acc_iou_05", "acc_iou_07"};
  return with_top5 ? full : base;
}

inline double metric_value(const EvalReport& r, const std::string& name) {
  if (name == "top1") return r.top1;
  if (name == "top3") return r.top3;
  if (name == "top5") {
    if (!r.top5) throw ContractError("report has no top5 column");
    return *r.top5;
  }
  if (name == "mean_iou") return r.mean_iou;
  if (name == "acc_iou_05") return r.acc_iou_05;
  if (name == "acc_iou_07") return r.acc_iou_07;
  throw ContractError("unknown metric: " + name);
}

inline std::vector<MetricDiff> compare_methods(
    const std::vector<EvalReport>& reports, const std::string& method_a,
    const std::string& method_b) {
  std::vector<int> ns;
  for (const auto& r : reports)
    if (std::find(ns.begin(), ns.end(), r.n_per_class) == ns.end())
      ns.push_back(r.n_per_class);
  std::sort(ns.begin(), ns.end());

  std::vector<MetricDiff> out;
  for (int n : ns) {
    const EvalReport* ra = nullptr;
    const EvalReport* rb = nullptr;
    for (const auto& r : reports) {
      if (r.n_per_class != n) continue;
      if (r.method == method_a) ra = &r;
      if (r.method == method_b) rb = &r;
    }
    if (!ra || !rb)
      throw MissingArtifactError("compare: missing report for n=" +
                                 std::to_string(n));
    const bool with_top5 = ra->top5.has_value() && rb->top5.has_value();
    MetricDiff d;
    d.n_per_class = n;
    for (const auto& m : metric_names(with_top5))
      d.diffs.emplace_back(m, metric_value(*ra, m) - metric_value(*rb, m));
    out.push_back(std::move(d));
  }
  return out;
}

inline std::string render_comparison_table(
    const std::vector<EvalReport>& reports) {
  const bool with_top5 =
      std::all_of(reports.begin(), reports.end(),
                  [](const EvalReport& r) { return r.top5.has_value(); });
  std::vector<EvalReport> rs = reports;
  std::sort(rs.begin(), rs.end(), [](const EvalReport& a, const EvalReport& b) {
    if (a.n_per_class != b.n_per_class) return a.n_per_class < b.n_per_class;
    return a.method < b.method;
  });

  std::ostringstream os;
  os << std::left << std::setw(6) << "n" << std::setw(10) << "method";
  for (const auto& m : metric_names(with_top5)) os << std::setw(12) << m;
  os << "\n";
  for (const auto& r : rs) {
    os << std::left << std::setw(6) << r.n_per_class << std::setw(10)
       << r.method;
    os << std::fixed << std::setprecision(4);
    for (const auto& m : metric_names(with_top5))
      os << std::setw(12) << metric_value(r, m);
    os.unsetf(std::ios::fixed);
    os << "\n";
  }
  return os.str();
}

}  // namespace ssldet
