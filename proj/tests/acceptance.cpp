// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Each criterion is verified against an independent oracle or an
// externally pinned value, never against the implementation under test.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "ssldet/checkpoint.hpp"
#include "ssldet/gradcam.hpp"
#include "ssldet/loader.hpp"
#include "ssldet/metrics.hpp"
#include "ssldet/synthetic.hpp"
#include "ssldet/train.hpp"

using namespace ssldet;

namespace {

int g_failures = 0;

struct Checker {
  std::string name;
  std::ostringstream why;
  bool ok = true;

  void require(bool cond, const std::string& what) {
    if (!cond && ok) {
      ok = false;
      why << what;
    }
  }
  template <typename T>
  void require_near(T got, T want, T tol, const std::string& what) {
    if (!(std::abs(got - want) <= tol) && ok) {
      ok = false;
      why << what << " (got " << got << ", want " << want << " +/- " << tol
          << ")";
    }
  }
};

void run(const std::string& name, const std::function<void(Checker&)>& body) {
  Checker c;
  c.name = name;
  try {
    body(c);
  } catch (const std::exception& e) {
    c.ok = false;
    c.why.str("");
    c.why << "exception: " << e.what();
  }
  if (c.ok) {
    std::printf("PASS %s\n", name.c_str());
  } else {
    std::printf("FAIL %s: %s\n", name.c_str(), c.why.str().c_str());
    ++g_failures;
  }
  std::fflush(stdout);
}

Eigen::MatrixXd random_embeddings(int rows, int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n01;
  Eigen::MatrixXd z(rows, dim);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < dim; ++j) z(i, j) = n01(rng);
  return z;
}

// Sample a prediction box away from the non-smooth loci of the distance-IoU
// surface (coordinate ties with the ground truth, degenerate extents).
Box4 smooth_pred_box(const BoundingBox& gt, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (;;) {
    double x1 = u(rng), y1 = u(rng), x2 = u(rng), y2 = u(rng);
    if (x1 > x2) std::swap(x1, x2);
    if (y1 > y2) std::swap(y1, y2);
    const Box4 p{x1, y1, x2, y2};
    if (x2 - x1 < 1e-2 || y2 - y1 < 1e-2) continue;
    bool near_tie = false;
    for (double v : p)
      for (double g : {gt.x_min, gt.y_min, gt.x_max, gt.y_max})
        if (std::abs(v - g) < 1e-2) near_tie = true;
    if (near_tie) continue;
    const double iw = std::min(x2, gt.x_max) - std::max(x1, gt.x_min);
    const double ih = std::min(y2, gt.y_max) - std::max(y1, gt.y_min);
    if (std::abs(iw) < 1e-2 || std::abs(ih) < 1e-2) continue;
    return p;
  }
}

// Shared state between the end-to-end criterion and the explanation-map
// criterion: the trained detector and its training manifest.
struct PipelineArtifacts {
  bool ready = false;
  std::optional<DetectorResult> ssl_detector;
  DatasetManifest train_manifest;
};
PipelineArtifacts g_pipeline;

}  // namespace

// ---------------------------------------------------------------------------

static void criterion_loss_oracles(Checker& c) {
  std::mt19937_64 rng(2024);
  const double taus[] = {0.1, 0.5, 1.0};
  for (int t = 0; t < 50; ++t) {
    const int pairs = 2 + static_cast<int>(rng() % 7);  // 2B <= 16
    const int dim = 1 + static_cast<int>(rng() % 8);
    const double tau = taus[t % 3];
    Eigen::MatrixXd z = random_embeddings(2 * pairs, dim, rng);
    c.require_near(info_nce(z, tau), oracles::brute_force_info_nce(z, tau),
                   1e-6, "contrastive loss disagrees with brute force");
  }
  for (int t = 0; t < 50; ++t) {
    const int k = 2 + static_cast<int>(rng() % 9);
    Eigen::VectorXd logits = random_embeddings(k, 1, rng).col(0) * 3.0;
    const int target = static_cast<int>(rng() % k);
    c.require_near(cce(logits, target), oracles::scalar_cce(logits, target),
                   1e-9,
                   "cross entropy disagrees with scalar oracle");
  }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 1000; ++t) {
    double x1 = u(rng), y1 = u(rng), x2 = u(rng), y2 = u(rng);
    if (x1 > x2) std::swap(x1, x2);
    if (y1 > y2) std::swap(y1, y2);
    double gx1 = u(rng), gy1 = u(rng), gx2 = u(rng), gy2 = u(rng);
    if (gx1 > gx2) std::swap(gx1, gx2);
    if (gy1 > gy2) std::swap(gy1, gy2);
    if (x2 - x1 < 1e-3 || y2 - y1 < 1e-3 || gx2 - gx1 < 1e-3 ||
        gy2 - gy1 < 1e-3) {
      --t;
      continue;
    }
    const Box4 p{x1, y1, x2, y2};
    const BoundingBox g{gx1, gy1, gx2, gy2};
    c.require_near(iou(p, g), oracles::raster_iou(p, g), 0.01,
                   "IoU disagrees with rasterization");
    c.require_near(diou(p, g), oracles::raster_diou(p, g), 0.01,
                   "distance-IoU disagrees with rasterization");
    if (!c.ok) return;
  }
  const Box4 p{0.0, 0.0, 0.5, 0.5};
  const BoundingBox g{0.25, 0.25, 0.75, 0.75};
  c.require_near(diou(p, g), 61.0 / 63.0, 1e-9,
                 "pinned distance-IoU value 61/63");
  c.require_near(iou(p, g), 1.0 / 7.0, 1e-9, "pinned IoU value 1/7");
}

static void criterion_gradient_checks(Checker& c) {
  std::mt19937_64 rng(77);
  constexpr double kTol = 1e-4;

  // Contrastive loss: every coordinate of several random batches.
  for (int t = 0; t < 20; ++t) {
    const int pairs = 2 + static_cast<int>(rng() % 4);
    const int dim = 2 + static_cast<int>(rng() % 5);
    const double tau = (t % 2) ? 0.5 : 0.2;
    Eigen::MatrixXd z = random_embeddings(2 * pairs, dim, rng);
    const Eigen::MatrixXd grad = info_nce_with_grad(z, tau).grad;
    for (int probe = 0; probe < 6; ++probe) {
      const int i = static_cast<int>(rng() % (2 * pairs));
      const int j = static_cast<int>(rng() % dim);
      const double fd = oracles::central_diff(
          [&](double v) {
            Eigen::MatrixXd zp = z;
            zp(i, j) = v;
            return info_nce(zp, tau);
          },
          z(i, j));
      c.require(oracles::rel_err(grad(i, j), fd) < kTol,
                "contrastive gradient mismatch");
      if (!c.ok) return;
    }
  }

  // Cross entropy.
  for (int t = 0; t < 20; ++t) {
    const int k = 2 + static_cast<int>(rng() % 7);
    Eigen::VectorXd logits = random_embeddings(k, 1, rng).col(0) * 2.0;
    const int target = static_cast<int>(rng() % k);
    const Eigen::VectorXd grad = cce_grad(logits, target);
    for (int i = 0; i < k; ++i) {
      const double fd = oracles::central_diff(
          [&](double v) {
            Eigen::VectorXd lp = logits;
            lp(i) = v;
            return cce(lp, target);
          },
          logits(i));
      c.require(oracles::rel_err(grad(i), fd) < kTol,
                "cross-entropy gradient mismatch");
      if (!c.ok) return;
    }
  }

  // Distance-IoU, sampled away from its non-smooth loci.
  const BoundingBox gt{0.3, 0.3, 0.7, 0.7};
  for (int t = 0; t < 20; ++t) {
    const Box4 pred = smooth_pred_box(gt, rng);
    const Box4 grad = diou_grad(pred, gt);
    for (int i = 0; i < 4; ++i) {
      const double fd = oracles::central_diff(
          [&](double v) {
            Box4 p = pred;
            p[i] = v;
            return diou(p, gt);
          },
          pred[i]);
      c.require(oracles::rel_err(grad[i], fd) < kTol,
                "distance-IoU gradient mismatch");
      if (!c.ok) return;
    }
  }

  // Convex blend of the two detector losses.
  std::uniform_real_distribution<double> ua(0.1, 0.9);
  for (int t = 0; t < 20; ++t) {
    const double alpha = ua(rng);
    const Box4 pred = smooth_pred_box(gt, rng);
    const Box4 grad = diou_grad(pred, gt);
    for (int i = 0; i < 4; ++i) {
      const double fd = oracles::central_diff(
          [&](double v) {
            Box4 p = pred;
            p[i] = v;
            return combined_loss(0.42, diou(p, gt), alpha);
          },
          pred[i]);
      c.require(oracles::rel_err((1.0 - alpha) * grad[i], fd) < kTol,
                "blended loss gradient mismatch");
      if (!c.ok) return;
    }
  }
}

static void criterion_invariance_suite(Checker& c) {
  std::mt19937_64 rng(5150);

  // Scale invariance of the contrastive loss.
  Eigen::MatrixXd z = random_embeddings(8, 5, rng);
  c.require_near(info_nce(z * 10.0, 0.5), info_nce(z, 0.5), 1e-9,
                 "contrastive loss not scale-invariant");

  // Pair-block permutation invariance.
  Eigen::MatrixXd zp(8, 5);
  const int order[4] = {2, 0, 3, 1};
  for (int m = 0; m < 4; ++m) {
    zp.row(2 * m) = z.row(2 * order[m]);
    zp.row(2 * m + 1) = z.row(2 * order[m] + 1);
  }
  c.require_near(info_nce(zp, 0.5), info_nce(z, 0.5), 1e-9,
                 "contrastive loss not permutation-invariant");

  // Localization accuracy is non-increasing in the threshold.
  std::vector<PredictionRecord> preds;
  std::uniform_real_distribution<double> u(0.02, 0.98);
  for (int i = 0; i < 50; ++i) {
    PredictionRecord p;
    p.logits = {1.0};
    p.target = 0;
    p.pred_box = Box4{0.0, 0.0, u(rng), 1.0};
    p.target_box = BoundingBox{0.0, 0.0, 1.0, 1.0};
    preds.push_back(p);
  }
  double prev = 1.1;
  for (double th : {0.1, 0.3, 0.5, 0.7, 0.9}) {
    const double a = loc_accuracy(preds, th);
    c.require(a <= prev, "localization accuracy not threshold-monotone");
    prev = a;
  }

  // Top-N accuracy is non-decreasing in N.
  std::vector<PredictionRecord> cls_preds;
  std::normal_distribution<double> n01;
  for (int i = 0; i < 40; ++i) {
    PredictionRecord p;
    p.logits.resize(6);
    for (auto& v : p.logits) v = n01(rng);
    p.target = static_cast<int>(rng() % 6);
    p.pred_box = Box4{0.0, 0.0, 1.0, 1.0};
    p.target_box = BoundingBox{0.0, 0.0, 1.0, 1.0};
    cls_preds.push_back(p);
  }
  prev = -1.0;
  for (int n = 1; n <= 6; ++n) {
    const double a = topn_accuracy(cls_preds, n);
    c.require(a >= prev, "top-N accuracy not N-monotone");
    prev = a;
  }

  // A frozen backbone never moves across optimization steps.
  DatasetManifest data =
      generate_synthetic_dataset(12, {"blue-square", "red-disc"}, 32, 11);
  auto [train_set, val_set] = split_train_val(data, 0.8, 11);
  FeatureExtractor fx("tiny-cnn", 11);
  const std::uint64_t digest_before = fx.digest();
  BackboneCheckpoint ckpt =
      BackboneCheckpoint::from_backbone(fx, "random", "invariance");
  TrainConfig cfg = TrainConfig::detector_defaults();
  cfg.max_epochs = 10;
  cfg.batch_size = 4;
  cfg.image_side = 32;
  cfg.seed = 11;
  cfg.augment = AugmentationPolicy::identity();
  DetectionHeads heads(fx.feature_dim(), 2, 11);
  DetectorResult res =
      train_detector(cfg, ckpt, train_set, val_set, std::move(heads));
  c.require(res.model.backbone.digest() == digest_before,
            "frozen backbone changed during detector training");

  // Checkpoints round-trip bit-exactly.
  const std::string path =
      (std::filesystem::temp_directory_path() / "acceptance_rt.ckpt").string();
  save_checkpoint(ckpt, path);
  BackboneCheckpoint back = load_checkpoint(path);
  c.require(back.tensors.size() == ckpt.tensors.size(),
            "checkpoint tensor count changed in round trip");
  for (std::size_t i = 0; i < ckpt.tensors.size() && c.ok; ++i) {
    c.require(back.tensors[i].first == ckpt.tensors[i].first,
              "checkpoint tensor name changed in round trip");
    c.require(back.tensors[i].second.raw() == ckpt.tensors[i].second.raw(),
              "checkpoint payload not bit-exact after round trip");
  }
  std::filesystem::remove(path);
}

static void criterion_end_to_end(Checker& c) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<std::string> classes = {"blue-square", "red-disc"};
  const int side = 64;
  const std::int64_t seed = 7;

  DatasetManifest pool = generate_synthetic_dataset(64, classes, side, seed);
  DatasetManifest holdout = generate_synthetic_dataset(
      32, classes, side,
      static_cast<std::int64_t>(derive_seed(seed, hash_string("holdout"))));

  // Contrastive pre-training.
  TrainConfig ssl_cfg = TrainConfig::ssl_defaults();
  ssl_cfg.max_epochs = 50;
  ssl_cfg.batch_size = 32;
  ssl_cfg.image_side = side;
  ssl_cfg.seed = seed;
  ssl_cfg.proj_dim = 64;
  FeatureExtractor backbone(ssl_cfg.backbone_arch, seed);
  ProjectionHead proj(backbone.feature_dim(), backbone.feature_dim(),
                      ssl_cfg.proj_dim, seed);
  SslResult ssl = pretrain_ssl(ssl_cfg, pool, backbone, proj);

  // Frozen linear probing, selecting by training-set loss.
  TrainConfig det_cfg = TrainConfig::detector_defaults();
  det_cfg.max_epochs = 200;
  det_cfg.batch_size = 32;
  det_cfg.learning_rate = 0.01;
  det_cfg.image_side = side;
  det_cfg.seed = seed;
  det_cfg.augment = AugmentationPolicy::identity();

  auto probe = [&](const BackboneCheckpoint& ck) {
    DetectionHeads heads(backbone.feature_dim(), 2, seed);
    return train_detector(det_cfg, ck, pool, pool, std::move(heads));
  };
  DetectorResult ssl_det = probe(ssl.checkpoint);

  auto train_preds = predict_manifest(ssl_det.model, pool);
  const double train_top1 = topn_accuracy(train_preds, 1);
  const double train_miou = mean_iou(train_preds);
  c.require(train_top1 == 1.0, "train top-1 accuracy below 1.0 (got " +
                                   std::to_string(train_top1) + ")");
  c.require(train_miou >= 0.5, "train mean IoU below 0.5 (got " +
                                   std::to_string(train_miou) + ")");

  // Untrained backbone under the same seed and budget.
  FeatureExtractor random_fx(ssl_cfg.backbone_arch, seed);
  BackboneCheckpoint random_ckpt =
      BackboneCheckpoint::from_backbone(random_fx, "random", "control");
  DetectorResult rand_det = probe(random_ckpt);

  const double ssl_holdout = mean_iou(predict_manifest(ssl_det.model, holdout));
  const double rand_holdout =
      mean_iou(predict_manifest(rand_det.model, holdout));
  c.require(ssl_holdout > rand_holdout,
            "pre-trained backbone not strictly better on holdout mean IoU "
            "(ssl " +
                std::to_string(ssl_holdout) + " vs random " +
                std::to_string(rand_holdout) + ")");

  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  c.require(secs < 600.0,
            "pipeline exceeded 10 CPU minutes (" + std::to_string(secs) + "s)");

  g_pipeline.ssl_detector = std::move(ssl_det);
  g_pipeline.train_manifest = pool;
  g_pipeline.ready = c.ok;
}

static void criterion_protocol_shapes(Checker& c) {
  auto first_classes = [](std::size_t k) {
    std::vector<std::string> out;
    for (const auto& [name, _] : synth_vocabulary()) {
      out.push_back(name);
      if (out.size() == k) break;
    }
    return out;
  };

  struct Variant {
    std::vector<std::string> classes;
    std::vector<int> ns;
    int pool_per_class;
  };
  const Variant variants[] = {
      {first_classes(5), {10, 20, 50, 100, 200, 500}, 520},
      {first_classes(20), {3, 5, 10, 20, 50, 100, 200}, 210},
  };

  for (const auto& v : variants) {
    const int total = static_cast<int>(v.classes.size()) * v.pool_per_class;
    DatasetManifest pool = generate_synthetic_dataset(total, v.classes, 16, 3);
    for (int n : v.ns) {
      SubsetSpec spec{v.classes, n, 41};
      DatasetManifest a = build_subset(pool, spec);
      c.require(a.records.size() == v.classes.size() * static_cast<size_t>(n),
                "subset size wrong for n=" + std::to_string(n));
      std::map<std::string, int> counts;
      for (const auto& r : a.records) ++counts[*r.category];
      for (const auto& cls : v.classes)
        c.require(counts[cls] == n,
                  "per-class count wrong for n=" + std::to_string(n));

      DatasetManifest b = build_subset(pool, spec);
      c.require(a.records.size() == b.records.size(),
                "subset size not deterministic");
      for (std::size_t i = 0; i < a.records.size() && c.ok; ++i)
        c.require(a.records[i].image_ref == b.records[i].image_ref,
                  "subset not deterministic under a fixed seed");
      if (!c.ok) return;
    }
  }
}

static void criterion_gradcam_contract(Checker& c) {
  c.require(g_pipeline.ready, "end-to-end pipeline artifacts unavailable");
  if (!c.ok) return;
  DetectorModel& model = g_pipeline.ssl_detector->model;
  const DatasetManifest& train = g_pipeline.train_manifest;

  auto class_index = [&](const std::string& name) {
    const auto& cn = model.class_names;
    return static_cast<int>(std::find(cn.begin(), cn.end(), name) -
                            cn.begin());
  };

  // Shape and range on one image.
  Tensor img0 = load_image(train.records[0], kHeatmapSide, model.norm_mean,
                           model.norm_std);
  Heatmap h0 = gradcam(model, img0, class_index(*train.records[0].category));
  c.require(h0.values.rank() == 2 && h0.values.dim(0) == kHeatmapSide &&
                h0.values.dim(1) == kHeatmapSide,
            "heatmap is not 224x224");
  for (std::int64_t i = 0; i < h0.values.numel() && c.ok; ++i)
    c.require(h0.values[i] >= 0.0 && h0.values[i] <= 1.0,
              "heatmap value outside [0,1]");

  // Zero classification weights give a zero gradient and an all-zero map.
  {
    std::vector<double> saved = model.heads.cls().weight().value.raw();
    for (auto& v : model.heads.cls().weight().value.raw()) v = 0.0;
    Heatmap hz = gradcam(model, img0, 0);
    for (std::int64_t i = 0; i < hz.values.numel() && c.ok; ++i)
      c.require(hz.values[i] == 0.0, "zero-gradient map is not all-zero");
    model.heads.cls().weight().value.raw() = saved;
  }

  // The map concentrates inside the annotated box more than area alone
  // would explain, for at least 80% of the training images.
  int localized = 0;
  for (const auto& rec : train.records) {
    Tensor img =
        load_image(rec, kHeatmapSide, model.norm_mean, model.norm_std);
    Heatmap h = gradcam(model, img, class_index(*rec.category));
    const BoundingBox& box = *rec.box;
    double total = 0.0, inside = 0.0;
    for (int y = 0; y < kHeatmapSide; ++y)
      for (int x = 0; x < kHeatmapSide; ++x) {
        const double v = h.values[y * kHeatmapSide + x];
        total += v;
        const double cx = (x + 0.5) / kHeatmapSide;
        const double cy = (y + 0.5) / kHeatmapSide;
        if (cx >= box.x_min && cx < box.x_max && cy >= box.y_min &&
            cy < box.y_max)
          inside += v;
      }
    const double area = box.area();
    if (total > 0.0 && inside / total > area) ++localized;
  }
  const double frac =
      static_cast<double>(localized) / static_cast<double>(train.records.size());
  c.require(frac >= 0.8, "heatmap mass concentrates in-box for only " +
                             std::to_string(frac) + " of training images");
}

static void criterion_report_fidelity(Checker& c) {
  // Pinned evaluation row: n=500, contrastively pre-trained method.
  EvalReport r;
  r.n_per_class = 500;
  r.method = "ssl";
  r.dataset = "TINY";
  r.seed = 7;
  r.top1 = 0.7037;
  r.top3 = 0.9675;
  r.mean_iou = 0.5371;
  r.acc_iou_05 = 0.6157;
  r.acc_iou_07 = 0.3120;
  r.validate();

  c.require(report_csv_header(false) ==
                "n,method,top1,top3,mean_iou,acc_iou_05,acc_iou_07",
            "csv header column order wrong");
  c.require(report_csv_row(r) == "500,ssl,0.7037,0.9675,0.5371,0.6157,0.312",
            "csv row does not reproduce the pinned values");
  const std::string table = render_comparison_table({r});
  for (const char* needle : {"n", "method", "top1", "top3", "mean_iou",
                             "acc_iou_05", "acc_iou_07", "0.7037", "0.9675",
                             "0.5371", "0.6157", "0.3120"})
    c.require(table.find(needle) != std::string::npos,
              std::string("rendered table missing '") + needle + "'");

  // Pinned method difference at n=3: mean IoU gap of +0.2484.
  auto make = [](std::string method, double miou) {
    EvalReport rep;
    rep.method = std::move(method);
    rep.dataset = "FULL";
    rep.n_per_class = 3;
    rep.top1 = 0.5;
    rep.top3 = 0.6;
    rep.top5 = 0.7;
    rep.mean_iou = miou;
    rep.acc_iou_05 = 0.4;
    rep.acc_iou_07 = 0.2;
    return rep;
  };
  auto diffs = compare_methods({make("ssl", 0.4169), make("baseline", 0.1685)},
                               "ssl", "baseline");
  c.require(diffs.size() == 1, "expected exactly one difference row");
  if (!c.ok) return;
  double miou_diff = 0.0;
  for (const auto& [name, v] : diffs[0].diffs)
    if (name == "mean_iou") miou_diff = v;
  c.require_near(miou_diff, 0.2484, 1e-4,
                 "mean IoU difference misses the pinned value");
}

int main() {
  run("loss-oracles", criterion_loss_oracles);
  run("gradient-checks", criterion_gradient_checks);
  run("invariance-suite", criterion_invariance_suite);
  run("end-to-end-pipeline", criterion_end_to_end);
  run("protocol-shapes", criterion_protocol_shapes);
  run("gradcam-contract", criterion_gradcam_contract);
  run("report-fidelity", criterion_report_fidelity);
  if (g_failures == 0) {
    std::printf("ALL CRITERIA PASSED\n");
    return 0;
  }
  std::printf("%d CRITERIA FAILED\n", g_failures);
  return 1;
}
