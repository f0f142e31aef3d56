#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <opencv2/imgproc.hpp>

#include "ssldet/config.hpp"
#include "ssldet/dataset.hpp"
#include "ssldet/detector_io.hpp"
#include "ssldet/gradcam.hpp"
#include "ssldet/loader.hpp"
#include "ssldet/metrics.hpp"
#include "ssldet/synthetic.hpp"
#include "ssldet/train.hpp"
#include "ssldet/voc.hpp"

namespace ssldet {

namespace fs_detail {

inline void prepare_out_dir(const std::string& out, bool force) {
  namespace fs = std::filesystem;
  if (fs::exists(out) && !fs::is_empty(out) && !force)
    throw ConfigError("output directory '" + out +
                      "' is not empty; pass --force to overwrite");
  fs::create_directories(out);
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IngestError("cannot write " + path);
  out << text;
}

inline void write_snapshot(const ExperimentConfig& cfg,
                           const std::string& out) {
  write_text((std::filesystem::path(out) / "config.json").string(),
             cfg.snapshot.dump(2) + "\n");
}

inline void write_json(const nlohmann::json& j, const std::string& path) {
  write_text(path, j.dump(2) + "\n");
}

inline nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("cannot read " + path);
  return nlohmann::json::parse(in);
}

}  // namespace fs_detail

// ---------------------------------------------------------------------------
// Dataset resolution

inline std::vector<std::string> synthetic_classes(const ExperimentConfig& cfg) {
  if (!cfg.dataset.classes.empty()) return cfg.dataset.classes;
  std::vector<std::string> all;
  for (const auto& [name, _] : synth_vocabulary()) all.push_back(name);
  const std::size_t want = cfg.dataset.variant == "FULL" ? 20 : 5;
  if (all.size() > want) all.resize(want);
  return all;
}

inline DatasetManifest resolve_labeled_manifest(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  if (cfg.dataset.kind == "voc") {
    DatasetManifest m = ingest_voc_directory(cfg.dataset.root, Source::voc2012);
    return m;
  }
  const auto path = fs::path(cfg.dataset.root) / "manifest.json";
  if (!fs::exists(path))
    throw MissingArtifactError("no manifest.json under " + cfg.dataset.root +
                               " (run the synth command first)");
  return manifest_from_json(fs_detail::read_json(path.string()));
}

inline DatasetManifest resolve_test_manifest(const ExperimentConfig& cfg) {
  if (!cfg.dataset.test_manifest.empty())
    return manifest_from_json(
        fs_detail::read_json(cfg.dataset.test_manifest));
  if (cfg.dataset.kind == "voc")
    return filter_single_object(
        ingest_voc_directory(cfg.dataset.root, Source::voc2007));
  // Held-out synthetic set under a derived seed.
  DatasetManifest m = generate_synthetic_dataset(
      cfg.dataset.test_num_images, synthetic_classes(cfg),
      cfg.dataset.image_side,
      static_cast<std::int64_t>(
          derive_seed(cfg.dataset.seed, hash_string("test-set"))));
  m.split = Split::test;
  return m;
}

inline DatasetManifest resolve_pool_manifest(const ExperimentConfig& cfg) {
  if (cfg.dataset.kind == "image-dir")
    return scan_image_directory(cfg.dataset.root);
  if (cfg.dataset.kind == "voc") {
    DatasetManifest m = ingest_voc_directory(cfg.dataset.root, Source::voc2012);
    m.split = Split::pool;
    return m;
  }
  DatasetManifest m = resolve_labeled_manifest(cfg);
  m.split = Split::pool;
  return m;
}

inline std::string method_of_provenance(const std::string& provenance) {
  if (provenance == "ssl-pretrained") return "ssl";
  if (provenance == "imagenet-imported") return "baseline";
  if (provenance == "random") return "random";
  return provenance;
}

// ---------------------------------------------------------------------------
// Subcommands. Each writes the config snapshot next to its outputs.

inline std::string cmd_synth(const ExperimentConfig& cfg,
                             const std::string& out, bool force) {
  namespace fs = std::filesystem;
  fs_detail::prepare_out_dir(out, force);
  DatasetManifest m = generate_synthetic_dataset(
      cfg.dataset.num_images, synthetic_classes(cfg), cfg.dataset.image_side,
      cfg.dataset.seed, (fs::path(out) / "images").string());
  const std::string manifest_path = (fs::path(out) / "manifest.json").string();
  fs_detail::write_json(to_json(m), manifest_path);

  DatasetManifest test = generate_synthetic_dataset(
      cfg.dataset.test_num_images, synthetic_classes(cfg),
      cfg.dataset.image_side,
      static_cast<std::int64_t>(
          derive_seed(cfg.dataset.seed, hash_string("test-set"))),
      (fs::path(out) / "test_images").string());
  test.split = Split::test;
  fs_detail::write_json(to_json(test),
                        (fs::path(out) / "test_manifest.json").string());
  fs_detail::write_snapshot(cfg, out);
  return manifest_path;
}

inline std::string cmd_pretrain(const ExperimentConfig& cfg,
                                const std::string& out, bool force) {
  namespace fs = std::filesystem;
  fs_detail::prepare_out_dir(out, force);
  DatasetManifest pool = resolve_pool_manifest(cfg);

  FeatureExtractor backbone(cfg.ssl.backbone_arch, cfg.ssl.seed);
  const std::int64_t hidden =
      cfg.ssl.proj_hidden > 0 ? cfg.ssl.proj_hidden : backbone.feature_dim();
  ProjectionHead proj(backbone.feature_dim(), hidden, cfg.ssl.proj_dim,
                      cfg.ssl.seed);

  SslResult res = pretrain_ssl(cfg.ssl, pool, backbone, proj);
  const std::string ckpt_path = (fs::path(out) / "backbone.ckpt").string();
  save_checkpoint(res.checkpoint, ckpt_path);
  res.record.checkpoint_ref = ckpt_path;
  fs_detail::write_json(to_json(res.record),
                        (fs::path(out) / "train_record.json").string());
  write_train_record_csv(res.record,
                         (fs::path(out) / "train_record.csv").string());
  fs_detail::write_snapshot(cfg, out);
  return ckpt_path;
}

inline std::vector<std::string> cmd_train(const ExperimentConfig& cfg,
                                          const std::string& ckpt_path,
                                          const std::string& out, bool force) {
  namespace fs = std::filesystem;
  fs_detail::prepare_out_dir(out, force);
  BackboneCheckpoint ckpt = load_checkpoint(ckpt_path);
  const std::string method = method_of_provenance(ckpt.provenance);

  DatasetManifest labeled = filter_single_object(resolve_labeled_manifest(cfg));
  std::vector<std::string> classes = cfg.dataset.kind == "voc" &&
                                             cfg.dataset.variant == "TINY"
                                         ? tiny_voc_classes()
                                         : labeled.class_names;

  std::vector<int> n_list = cfg.dataset.n_list;
  if (n_list.empty()) {
    // Single cell: the whole labeled set.
    std::map<std::string, int> counts;
    for (const auto& r : labeled.records) ++counts[*r.category];
    int min_count = std::numeric_limits<int>::max();
    for (const auto& c : classes)
      min_count = std::min(min_count, counts.count(c) ? counts[c] : 0);
    n_list.push_back(min_count);
  }

  std::vector<std::string> outputs;
  for (int n : n_list) {
    SubsetSpec spec{classes, n, cfg.dataset.seed};
    DatasetManifest subset = build_subset(labeled, spec);
    // The heads map onto exactly the requested classes.
    subset.class_names = classes;
    std::sort(subset.class_names.begin(), subset.class_names.end());
    auto [train_set, val_set] =
        split_train_val(subset, cfg.dataset.train_fraction, cfg.dataset.seed);

    FeatureExtractor probe(ckpt.architecture, 0);
    DetectionHeads heads(probe.feature_dim(),
                         static_cast<std::int64_t>(subset.class_names.size()),
                         cfg.detector.seed);
    DetectorResult res =
        train_detector(cfg.detector, ckpt, train_set, val_set, std::move(heads));

    const std::string det_path =
        (fs::path(out) / ("detector_" + method + "_n" + std::to_string(n) +
                          ".ckpt"))
            .string();
    save_detector(res.model, {method, n, cfg.detector.seed}, det_path);
    res.record.checkpoint_ref = det_path;
    fs_detail::write_json(
        to_json(res.record),
        (fs::path(out) / ("train_record_" + method + "_n" + std::to_string(n) +
                          ".json"))
            .string());
    write_train_record_csv(
        res.record,
        (fs::path(out) / ("train_record_" + method + "_n" + std::to_string(n) +
                          ".csv"))
            .string());
    outputs.push_back(det_path);
  }
  fs_detail::write_snapshot(cfg, out);
  return outputs;
}

inline std::vector<EvalReport> cmd_eval(const ExperimentConfig& cfg,
                                        const std::string& detector_path,
                                        const std::string& out, bool force) {
  namespace fs = std::filesystem;
  fs_detail::prepare_out_dir(out, force);
  DatasetManifest test = resolve_test_manifest(cfg);

  std::vector<std::string> det_files;
  if (fs::is_directory(detector_path)) {
    for (const auto& e : fs::directory_iterator(detector_path))
      if (e.path().filename().string().rfind("detector_", 0) == 0 &&
          e.path().extension() == ".ckpt")
        det_files.push_back(e.path().string());
    std::sort(det_files.begin(), det_files.end());
  } else {
    det_files.push_back(detector_path);
  }
  if (det_files.empty())
    throw MissingArtifactError("no detector files under " + detector_path);

  std::vector<EvalReport> reports;
  for (const auto& f : det_files) {
    auto [model, info] = load_detector(f);
    // Evaluation restricted to the classes the detector knows.
    DatasetManifest subset;
    subset.class_names = model.class_names;
    subset.split = test.split;
    subset.seed = test.seed;
    for (const auto& r : test.records)
      if (r.labeled() &&
          std::find(model.class_names.begin(), model.class_names.end(),
                    *r.category) != model.class_names.end())
        subset.records.push_back(r);
    if (subset.records.empty())
      throw MissingArtifactError("test manifest has no records for detector " +
                                 f);
    auto preds = predict_manifest(model, subset);
    ReportContext ctx{cfg.dataset.variant, info.method, info.n_per_class,
                      info.seed};
    EvalReport rep = build_report(preds, ctx);
    fs_detail::write_json(
        to_json(rep),
        (fs::path(out) / ("report_" + info.method + "_n" +
                          std::to_string(info.n_per_class) + ".json"))
            .string());
    reports.push_back(std::move(rep));
  }

  const bool with_top5 =
      std::all_of(reports.begin(), reports.end(),
                  [](const EvalReport& r) { return r.top5.has_value(); });
  std::string csv = report_csv_header(with_top5) + "\n";
  for (const auto& r : reports) csv += report_csv_row(r) + "\n";
  fs_detail::write_text((fs::path(out) / "reports.csv").string(), csv);
  fs_detail::write_text((fs::path(out) / "reports.txt").string(),
                        render_comparison_table(reports));
  fs_detail::write_snapshot(cfg, out);
  return reports;
}

inline std::vector<std::string> cmd_gradcam(const ExperimentConfig& cfg,
                                            const std::string& detector_path,
                                            const std::vector<int>& record_ids,
                                            const std::string& out,
                                            bool force) {
  namespace fs = std::filesystem;
  fs_detail::prepare_out_dir(out, force);
  auto [model, info] = load_detector(detector_path);
  DatasetManifest test = resolve_test_manifest(cfg);

  std::vector<std::string> outputs;
  for (int id : record_ids) {
    if (id < 0 || id >= static_cast<int>(test.records.size()))
      throw MissingArtifactError("gradcam: record index " + std::to_string(id) +
                                 " out of range");
    const ImageRecord& rec = test.records[id];
    Tensor img = load_image(rec, kHeatmapSide, model.norm_mean, model.norm_std);
    // Ground-truth class when available, argmax otherwise.
    int target;
    if (rec.category) {
      const auto& cn = model.class_names;
      auto it = std::find(cn.begin(), cn.end(), *rec.category);
      if (it == cn.end())
        throw ContractError("gradcam: record class not known to detector");
      target = static_cast<int>(it - cn.begin());
    } else {
      Tensor batch({1, 3, kHeatmapSide, kHeatmapSide});
      std::copy(img.data(), img.data() + img.numel(), batch.data());
      DetectionOutput pred = model.predict(batch);
      target = 0;
      for (std::int64_t j = 1; j < model.heads.num_classes(); ++j)
        if (pred.logits[j] > pred.logits[target]) target = static_cast<int>(j);
    }

    Heatmap heat = gradcam(model, img, target, rec.image_ref);
    cv::Mat blended = overlay(img, heat, 0.5, model.norm_mean, model.norm_std);
    const std::string png =
        (fs::path(out) / ("cam_" + std::to_string(id) + ".png")).string();
    if (!cv::imwrite(png, blended)) throw IngestError("cannot write " + png);
    write_heatmap_raw(
        heat, (fs::path(out) / ("cam_" + std::to_string(id) + ".bin")).string(),
        (fs::path(out) / ("cam_" + std::to_string(id) + ".json")).string());
    outputs.push_back(png);
  }
  fs_detail::write_snapshot(cfg, out);
  return outputs;
}

// ---------------------------------------------------------------------------
// compare: per-metric ssl-minus-baseline differences over n.

inline cv::Mat render_diff_plot(const std::vector<int>& ns,
                                const std::vector<double>& diffs,
                                const std::string& title) {
  const int w = 480, h = 360, ml = 60, mr = 20, mt = 40, mb = 40;
  cv::Mat img(h, w, CV_8UC3, cv::Scalar(255, 255, 255));
  double lo = 0.0, hi = 0.0;
  for (double d : diffs) {
    lo = std::min(lo, d);
    hi = std::max(hi, d);
  }
  if (hi - lo < 1e-9) {
    hi += 0.1;
    lo -= 0.1;
  }
  auto px = [&](std::size_t i) {
    return ml + static_cast<int>((w - ml - mr) * (ns.size() == 1
                                                      ? 0.5
                                                      : static_cast<double>(i) /
                                                            (ns.size() - 1)));
  };
  auto py = [&](double v) {
    return mt + static_cast<int>((h - mt - mb) * (1.0 - (v - lo) / (hi - lo)));
  };
  cv::line(img, {ml, mt}, {ml, h - mb}, cv::Scalar(0, 0, 0));
  cv::line(img, {ml, h - mb}, {w - mr, h - mb}, cv::Scalar(0, 0, 0));
  if (lo < 0.0 && hi > 0.0)
    cv::line(img, {ml, py(0.0)}, {w - mr, py(0.0)}, cv::Scalar(180, 180, 180));
  for (std::size_t i = 0; i + 1 < ns.size(); ++i)
    cv::line(img, {px(i), py(diffs[i])}, {px(i + 1), py(diffs[i + 1])},
             cv::Scalar(180, 60, 20), 2);
  for (std::size_t i = 0; i < ns.size(); ++i) {
    cv::circle(img, {px(i), py(diffs[i])}, 3, cv::Scalar(180, 60, 20), -1);
    cv::putText(img, std::to_string(ns[i]), {px(i) - 8, h - mb + 18},
                cv::FONT_HERSHEY_SIMPLEX, 0.4, cv::Scalar(0, 0, 0));
  }
  cv::putText(img, title, {ml, 24}, cv::FONT_HERSHEY_SIMPLEX, 0.6,
              cv::Scalar(0, 0, 0));
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", hi);
  cv::putText(img, buf, {4, mt + 6}, cv::FONT_HERSHEY_SIMPLEX, 0.4,
              cv::Scalar(0, 0, 0));
  std::snprintf(buf, sizeof(buf), "%.3f", lo);
  cv::putText(img, buf, {4, h - mb}, cv::FONT_HERSHEY_SIMPLEX, 0.4,
              cv::Scalar(0, 0, 0));
  return img;
}

struct CompareOutput {
  std::vector<MetricDiff> diffs;
};

inline CompareOutput cmd_compare(const std::string& report_dir,
                                 const std::string& out, bool force) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(report_dir))
    throw MissingArtifactError("compare: not a directory: " + report_dir);
  fs_detail::prepare_out_dir(out, force);

  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(report_dir))
    if (e.path().extension() == ".json" &&
        e.path().filename().string().rfind("report_", 0) == 0)
      files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  if (files.empty())
    throw MissingArtifactError("compare: no report_*.json under " + report_dir);

  std::vector<EvalReport> reports;
  for (const auto& f : files)
    reports.push_back(report_from_json(fs_detail::read_json(f)));

  // Multi-seed aggregation: mean per (method, n).
  std::map<std::pair<std::string, int>, std::vector<EvalReport>> groups;
  for (const auto& r : reports) groups[{r.method, r.n_per_class}].push_back(r);
  std::vector<EvalReport> aggregated;
  for (const auto& [key, rs] : groups) {
    EvalReport mean = rs.front();
    if (rs.size() > 1) {
      auto avg = [&](auto getter) {
        double acc = 0.0;
        for (const auto& r : rs) acc += getter(r);
        return acc / static_cast<double>(rs.size());
      };
      mean.top1 = avg([](const EvalReport& r) { return r.top1; });
      mean.top3 = avg([](const EvalReport& r) { return r.top3; });
      if (mean.top5)
        mean.top5 = avg([](const EvalReport& r) { return *r.top5; });
      mean.mean_iou = avg([](const EvalReport& r) { return r.mean_iou; });
      mean.acc_iou_05 = avg([](const EvalReport& r) { return r.acc_iou_05; });
      mean.acc_iou_07 = avg([](const EvalReport& r) { return r.acc_iou_07; });
    }
    aggregated.push_back(std::move(mean));
  }

  CompareOutput result;
  result.diffs = compare_methods(aggregated, "ssl", "baseline");

  std::string csv = "n,metric,diff_ssl_minus_baseline\n";
  std::map<std::string, std::pair<std::vector<int>, std::vector<double>>>
      per_metric;
  for (const auto& d : result.diffs)
    for (const auto& [metric, value] : d.diffs) {
      csv += std::to_string(d.n_per_class) + "," + metric + "," +
             std::to_string(value) + "\n";
      per_metric[metric].first.push_back(d.n_per_class);
      per_metric[metric].second.push_back(value);
    }
  fs_detail::write_text((fs::path(out) / "compare.csv").string(), csv);

  std::string txt = render_comparison_table(aggregated);
  txt += "\nssl minus baseline:\n";
  for (const auto& d : result.diffs) {
    txt += "n=" + std::to_string(d.n_per_class) + ":";
    for (const auto& [metric, value] : d.diffs) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), " %s=%+.4f", metric.c_str(), value);
      txt += buf;
    }
    txt += "\n";
  }
  fs_detail::write_text((fs::path(out) / "compare.txt").string(), txt);

  for (const auto& [metric, series] : per_metric) {
    cv::Mat plot =
        render_diff_plot(series.first, series.second, metric + " (ssl-baseline)");
    cv::imwrite((fs::path(out) / ("diff_" + metric + ".png")).string(), plot);
  }
  return result;
}

}  // namespace ssldet
