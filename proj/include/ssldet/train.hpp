#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssldet/augment.hpp"
#include "ssldet/checkpoint.hpp"
#include "ssldet/common.hpp"
#include "ssldet/dataset.hpp"
#include "ssldet/loader.hpp"
#include "ssldet/losses.hpp"
#include "ssldet/metrics.hpp"
#include "ssldet/model.hpp"
#include "ssldet/nn.hpp"

namespace ssldet {

enum class Phase { ssl, detector };

struct TrainConfig {
  Phase phase = Phase::ssl;
  int max_epochs = 200;
  int batch_size = 32;
  double learning_rate = 0.0005;
  double tau = 0.5;    // ssl phase
  double alpha = 0.5;  // detector phase
  std::int64_t seed = 0;
  std::optional<int> patience;  // early stop on validation loss
  int image_side = 224;
  double norm_mean = 0.5;
  double norm_std = 0.5;
  std::string backbone_arch = "tiny-cnn";
  std::int64_t proj_hidden = 0;  // 0 -> feature dim
  std::int64_t proj_dim = 128;
  AugmentationPolicy augment = AugmentationPolicy::ssl_default();
  std::string selection = "loss";  // "loss" | "mean_iou" (detector only)

  static TrainConfig ssl_defaults() {
    TrainConfig c;
    c.phase = Phase::ssl;
    c.max_epochs = 200;
    c.batch_size = 32;
    c.learning_rate = 0.0005;
    c.augment = AugmentationPolicy::ssl_default();
    return c;
  }

  static TrainConfig detector_defaults() {
    TrainConfig c;
    c.phase = Phase::detector;
    c.max_epochs = 100;
    c.batch_size = 32;
    c.learning_rate = 0.001;
    c.alpha = 0.5;
    c.augment = AugmentationPolicy::detector_default();
    return c;
  }
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double seconds = 0.0;
};

struct TrainRecord {
  std::vector<EpochStats> epochs;
  int best_epoch = -1;
  double best_val_loss = 0.0;
  std::string checkpoint_ref;
};

inline nlohmann::json to_json(const TrainRecord& r) {
  nlohmann::json j;
  j["best_epoch"] = r.best_epoch;
  j["best_val_loss"] = r.best_val_loss;
  j["checkpoint_ref"] = r.checkpoint_ref;
  j["epochs"] = nlohmann::json::array();
  for (const auto& e : r.epochs)
    j["epochs"].push_back({{"epoch", e.epoch},
                           {"train_loss", e.train_loss},
                           {"val_loss", e.val_loss},
                           {"seconds", e.seconds}});
  return j;
}

inline void write_train_record_csv(const TrainRecord& r,
                                   const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IngestError("cannot write " + path);
  out << "epoch,train_loss,val_loss,seconds\n";
  for (const auto& e : r.epochs)
    out << e.epoch << "," << e.train_loss << "," << e.val_loss << ","
        << e.seconds << "\n";
}

namespace detail {

inline Tensor stack_batch(const std::vector<Tensor>& imgs) {
  if (imgs.empty()) throw ContractError("stack_batch: empty batch");
  const auto& s = imgs.front().shape();
  Tensor out({static_cast<std::int64_t>(imgs.size()), s[0], s[1], s[2]});
  const auto per = imgs.front().numel();
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    if (!imgs[i].same_shape(imgs.front()))
      throw ContractError("stack_batch: inhomogeneous shapes");
    std::copy(imgs[i].data(), imgs[i].data() + per, out.data() + i * per);
  }
  return out;
}

inline void check_finite(double loss, int epoch, int step) {
  if (!std::isfinite(loss)) {
    std::ostringstream os;
    os << "non-finite loss " << loss << " at epoch " << epoch << " step "
       << step;
    throw TrainingAbort(os.str());
  }
}

inline bool policy_is_identity(const AugmentationPolicy& p) {
  const bool crop_noop =
      !p.crop_enabled || (p.crop_scale_min >= 1.0 && p.crop_aspect_min == 1.0 &&
                          p.crop_aspect_max == 1.0);
  return crop_noop && p.flip_prob == 0.0 && p.jitter_prob == 0.0 &&
         p.grayscale_prob == 0.0 && p.blur_prob == 0.0 && p.erase_prob == 0.0;
}

inline std::vector<Tensor> preload(const DatasetManifest& m,
                                   const TrainConfig& cfg) {
  std::vector<Tensor> out;
  out.reserve(m.records.size());
  for (const auto& r : m.records)
    out.push_back(load_image(r, cfg.image_side, cfg.norm_mean, cfg.norm_std));
  return out;
}

struct ParamSnapshot {
  std::vector<Tensor> values;

  static ParamSnapshot take(const std::vector<Param*>& params) {
    ParamSnapshot s;
    for (auto* p : params) s.values.push_back(p->value);
    return s;
  }
  void restore(const std::vector<Param*>& params) const {
    if (params.size() != values.size())
      throw ContractError("snapshot: parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i)
      params[i]->value = values[i];
  }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// SSL pre-training of backbone + projection head with NT-Xent.

struct SslResult {
  BackboneCheckpoint checkpoint;
  TrainRecord record;
};

inline SslResult pretrain_ssl(const TrainConfig& cfg,
                              const DatasetManifest& pool,
                              FeatureExtractor& backbone,
                              ProjectionHead& proj) {
  if (cfg.phase != Phase::ssl)
    throw ContractError("pretrain_ssl: config phase must be ssl");
  if (pool.records.empty()) throw ContractError("pretrain_ssl: empty pool");
  cfg.augment.validate();

  const auto n = pool.records.size();
  // Seeded 10% validation slice (at least one pair on each side).
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  {
    auto rng = make_rng(derive_seed(cfg.seed, hash_string("ssl-val-split")));
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::size_t n_val = std::max<std::size_t>(2, n / 10);
  if (n_val + 2 > n) n_val = n >= 4 ? 2 : 0;
  std::vector<std::size_t> val_idx(order.begin(), order.begin() + n_val);
  std::vector<std::size_t> train_idx(order.begin() + n_val, order.end());
  if (train_idx.size() < 2)
    throw ContractError("pretrain_ssl: pool too small for a training pair");
  std::sort(val_idx.begin(), val_idx.end());
  std::sort(train_idx.begin(), train_idx.end());

  const std::vector<Tensor> base = detail::preload(pool, cfg);

  std::vector<Param*> params = backbone.params();
  for (auto* p : proj.params()) params.push_back(p);
  Adam opt(params, cfg.learning_rate);

  auto run_batch = [&](const std::vector<std::size_t>& idx, std::size_t begin,
                       std::size_t end, std::uint64_t view_salt, bool train_mode,
                       int epoch, int step) -> double {
    std::vector<Tensor> views;
    views.reserve(2 * (end - begin));
    for (std::size_t i = begin; i < end; ++i) {
      Rng rng = make_rng(derive_seed(cfg.seed, view_salt, idx[i]));
      ViewPair vp = ssl_view_pair(base[idx[i]], cfg.augment, rng);
      views.push_back(std::move(vp.view_a));
      views.push_back(std::move(vp.view_b));
    }
    Tensor batch = detail::stack_batch(views);
    EncodeResult enc = backbone.encode(batch, train_mode);
    Tensor z = proj.forward(enc.pooled);

    const auto rows = z.dim(0);
    const auto dim = z.dim(1);
    Eigen::MatrixXd zm(rows, dim);
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t c = 0; c < dim; ++c) zm(r, c) = z[r * dim + c];

    if (!train_mode) {
      const double loss = info_nce(zm, cfg.tau);
      detail::check_finite(loss, epoch, step);
      return loss;
    }

    InfoNceResult res = info_nce_with_grad(zm, cfg.tau);
    detail::check_finite(res.loss, epoch, step);

    Tensor grad_z({rows, dim});
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t c = 0; c < dim; ++c) grad_z[r * dim + c] = res.grad(r, c);

    opt.zero_grad();
    Tensor grad_pooled = proj.backward(grad_z);
    backbone.backward_from_pooled(grad_pooled, enc.feature_maps.shape());
    opt.step();
    return res.loss;
  };

  TrainRecord record;
  detail::ParamSnapshot best_backbone;
  double best_val = std::numeric_limits<double>::infinity();
  int epochs_since_best = 0;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();

    std::vector<std::size_t> shuffled = train_idx;
    auto erng = make_rng(derive_seed(cfg.seed, hash_string("epoch"), epoch));
    std::shuffle(shuffled.begin(), shuffled.end(), erng);

    double train_loss = 0.0;
    int batches = 0;
    const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
    for (std::size_t b = 0; b + 1 < shuffled.size() + 1; b += bs) {
      const std::size_t end = std::min(b + bs, shuffled.size());
      if (end - b < 2) break;  // a contrastive batch needs two sources
      train_loss += run_batch(shuffled, b, end,
                              derive_seed(hash_string("train-view"), epoch),
                              /*train_mode=*/true, epoch, batches);
      ++batches;
    }
    train_loss /= std::max(batches, 1);

    // Fixed validation views so the curve tracks the model, not the draws.
    double val_loss = 0.0;
    int val_batches = 0;
    for (std::size_t b = 0; b + 1 < val_idx.size() + 1; b += bs) {
      const std::size_t end = std::min(b + bs, val_idx.size());
      if (end - b < 2) break;
      val_loss += run_batch(val_idx, b, end, hash_string("val-view"),
                            /*train_mode=*/false, epoch, val_batches);
      ++val_batches;
    }
    val_loss /= std::max(val_batches, 1);

    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    record.epochs.push_back({epoch, train_loss, val_loss, secs});

    if (val_loss < best_val) {
      best_val = val_loss;
      record.best_epoch = epoch;
      best_backbone = detail::ParamSnapshot::take(backbone.params_unchecked());
      epochs_since_best = 0;
    } else if (cfg.patience && ++epochs_since_best >= *cfg.patience) {
      break;
    }
  }
  record.best_val_loss = best_val;
  best_backbone.restore(backbone.params_unchecked());

  SslResult out;
  out.record = record;
  out.checkpoint = BackboneCheckpoint::from_backbone(
      backbone, "ssl-pretrained", std::to_string(cfg.seed));
  return out;
}

// ---------------------------------------------------------------------------
// Frozen-backbone detector training.

struct DetectorModel {
  FeatureExtractor backbone;
  DetectionHeads heads;
  std::vector<std::string> class_names;
  int image_side = 224;
  double norm_mean = 0.5;
  double norm_std = 0.5;

  DetectionOutput predict(const Tensor& batch) {
    EncodeResult enc = backbone.encode(batch);
    return heads.forward(enc.pooled);
  }
};

struct DetectorResult {
  DetectorModel model;
  TrainRecord record;
};

inline DetectorResult train_detector(const TrainConfig& cfg,
                                     const BackboneCheckpoint& ckpt,
                                     const DatasetManifest& train_set,
                                     const DatasetManifest& val_set,
                                     DetectionHeads heads) {
  if (cfg.phase != Phase::detector)
    throw ContractError("train_detector: config phase must be detector");
  cfg.augment.validate();
  if (cfg.augment.has_geometric())
    throw ConfigError("train_detector: detector policy must be non-geometric");
  if (train_set.records.empty())
    throw ContractError("train_detector: empty training set");
  if (heads.num_classes() !=
      static_cast<std::int64_t>(train_set.class_names.size()))
    throw ContractError("train_detector: heads expect " +
                        std::to_string(heads.num_classes()) +
                        " classes, manifest has " +
                        std::to_string(train_set.class_names.size()));

  FeatureExtractor backbone = ckpt.restore(cfg.seed);
  backbone.freeze();
  if (!backbone.is_frozen())
    throw ContractError("train_detector: backbone must be frozen");
  const std::uint64_t frozen_digest = backbone.digest();

  auto targets_of = [](const DatasetManifest& m) {
    std::vector<int> t;
    std::vector<BoundingBox> b;
    for (const auto& r : m.records) {
      if (!r.labeled())
        throw ContractError("train_detector: unlabeled record " + r.image_ref);
      t.push_back(m.class_index(*r.category));
      b.push_back(*r.box);
    }
    return std::make_pair(t, b);
  };
  const auto [train_targets, train_boxes] = targets_of(train_set);
  const auto [val_targets, val_boxes] = targets_of(val_set);

  const std::vector<Tensor> train_base = detail::preload(train_set, cfg);
  const std::vector<Tensor> val_base = detail::preload(val_set, cfg);

  // With an identity policy the frozen features never change, so they are
  // computed once.
  const bool static_features = detail::policy_is_identity(cfg.augment);
  std::vector<Tensor> train_pooled_cache, val_pooled_cache;
  auto pooled_of = [&](const Tensor& img) {
    Tensor batch = detail::stack_batch({img});
    return backbone.encode(batch).pooled;
  };
  if (static_features) {
    for (const auto& img : train_base) train_pooled_cache.push_back(pooled_of(img));
  }
  for (const auto& img : val_base) val_pooled_cache.push_back(pooled_of(img));

  Adam opt(heads.params(), cfg.learning_rate);

  const auto k = heads.num_classes();
  auto batch_pooled = [&](const std::vector<std::size_t>& idx,
                          std::size_t begin, std::size_t end, int epoch) {
    Tensor pooled({static_cast<std::int64_t>(end - begin),
                   backbone.feature_dim()});
    for (std::size_t i = begin; i < end; ++i) {
      Tensor row;
      if (static_features) {
        row = train_pooled_cache[idx[i]];
      } else {
        Rng rng = make_rng(derive_seed(cfg.seed, hash_string("det-aug"),
                                       epoch, idx[i]));
        Tensor img = detector_augment(train_base[idx[i]], cfg.augment, rng);
        row = pooled_of(img);
      }
      std::copy(row.data(), row.data() + backbone.feature_dim(),
                pooled.data() + (i - begin) * backbone.feature_dim());
    }
    return pooled;
  };

  auto eval_loss = [&](const std::vector<Tensor>& pooled_cache,
                       const std::vector<int>& tgt,
                       const std::vector<BoundingBox>& boxes) {
    if (pooled_cache.empty()) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < pooled_cache.size(); ++i) {
      DetectionOutput out = heads.forward(pooled_cache[i]);
      Eigen::Map<const Eigen::VectorXd> logits(out.logits.data(), k);
      Box4 pred{out.boxes[0], out.boxes[1], out.boxes[2], out.boxes[3]};
      acc += combined_loss(cce(logits, tgt[i]), diou(pred, boxes[i]),
                           cfg.alpha);
    }
    return acc / static_cast<double>(pooled_cache.size());
  };

  auto eval_metric = [&](const std::vector<Tensor>& pooled_cache,
                         const std::vector<int>& tgt,
                         const std::vector<BoundingBox>& boxes) {
    // Selection score to minimize: negative mean IoU.
    if (pooled_cache.empty()) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < pooled_cache.size(); ++i) {
      DetectionOutput out = heads.forward(pooled_cache[i]);
      Box4 pred{out.boxes[0], out.boxes[1], out.boxes[2], out.boxes[3]};
      acc += iou(pred, boxes[i]);
    }
    return -acc / static_cast<double>(pooled_cache.size());
  };

  TrainRecord record;
  detail::ParamSnapshot best_heads;
  double best_val = std::numeric_limits<double>::infinity();
  double best_score = std::numeric_limits<double>::infinity();
  int epochs_since_best = 0;

  std::vector<std::size_t> indices(train_set.records.size());
  std::iota(indices.begin(), indices.end(), 0);

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> shuffled = indices;
    auto erng = make_rng(derive_seed(cfg.seed, hash_string("det-epoch"), epoch));
    std::shuffle(shuffled.begin(), shuffled.end(), erng);

    double train_loss = 0.0;
    std::size_t samples = 0;
    const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
    for (std::size_t b = 0; b < shuffled.size(); b += bs) {
      const std::size_t end = std::min(b + bs, shuffled.size());
      const std::int64_t bsz = static_cast<std::int64_t>(end - b);
      Tensor pooled = batch_pooled(shuffled, b, end, epoch);
      DetectionOutput out = heads.forward(pooled);

      Tensor grad_logits({bsz, k});
      Tensor grad_boxes({bsz, 4});
      double batch_loss = 0.0;
      for (std::int64_t i = 0; i < bsz; ++i) {
        const int tgt = train_targets[shuffled[b + i]];
        const BoundingBox& gt = train_boxes[shuffled[b + i]];
        Eigen::Map<const Eigen::VectorXd> logits(out.logits.data() + i * k, k);
        Box4 pred{out.boxes[i * 4 + 0], out.boxes[i * 4 + 1],
                  out.boxes[i * 4 + 2], out.boxes[i * 4 + 3]};
        batch_loss +=
            combined_loss(cce(logits, tgt), diou(pred, gt), cfg.alpha);

        Eigen::VectorXd gl = cce_grad(logits, tgt) * (cfg.alpha / bsz);
        for (std::int64_t j = 0; j < k; ++j) grad_logits[i * k + j] = gl(j);
        Box4 gb = diou_grad(pred, gt);
        for (int j = 0; j < 4; ++j)
          grad_boxes[i * 4 + j] = gb[j] * ((1.0 - cfg.alpha) / bsz);
      }
      batch_loss /= static_cast<double>(bsz);
      detail::check_finite(batch_loss, epoch, static_cast<int>(b / bs));

      opt.zero_grad();
      heads.backward(grad_logits, grad_boxes);
      opt.step();

      train_loss += batch_loss * static_cast<double>(bsz);
      samples += end - b;
    }
    train_loss /= static_cast<double>(std::max<std::size_t>(samples, 1));

    const double val_loss = eval_loss(val_pooled_cache, val_targets, val_boxes);
    detail::check_finite(val_loss, epoch, -1);
    const double score = cfg.selection == "mean_iou"
                             ? eval_metric(val_pooled_cache, val_targets,
                                           val_boxes)
                             : val_loss;

    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    record.epochs.push_back({epoch, train_loss, val_loss, secs});

    if (score < best_score) {
      best_score = score;
      best_val = val_loss;
      record.best_epoch = epoch;
      std::vector<Param*> hp = heads.params();
      best_heads = detail::ParamSnapshot::take(hp);
      epochs_since_best = 0;
    } else if (cfg.patience && ++epochs_since_best >= *cfg.patience) {
      break;
    }
  }
  record.best_val_loss = best_val;
  {
    std::vector<Param*> hp = heads.params();
    best_heads.restore(hp);
  }

  if (backbone.digest() != frozen_digest)
    throw ContractError("train_detector: frozen backbone changed");

  DetectorResult out{DetectorModel{std::move(backbone), std::move(heads),
                                   train_set.class_names, cfg.image_side,
                                   cfg.norm_mean, cfg.norm_std},
                     std::move(record)};
  return out;
}

// ---------------------------------------------------------------------------

inline std::vector<PredictionRecord> predict_manifest(DetectorModel& model,
                                                      const DatasetManifest& m) {
  std::vector<PredictionRecord> preds;
  const auto k = model.heads.num_classes();
  for (const auto& r : m.records) {
    if (!r.labeled())
      throw ContractError("predict_manifest: unlabeled record " + r.image_ref);
    Tensor img =
        load_image(r, model.image_side, model.norm_mean, model.norm_std);
    Tensor batch = detail::stack_batch({img});
    DetectionOutput out = model.predict(batch);
    PredictionRecord p;
    p.record_id = r.image_ref;
    p.logits.assign(out.logits.data(), out.logits.data() + k);
    p.pred_box = {out.boxes[0], out.boxes[1], out.boxes[2], out.boxes[3]};
    p.target = m.class_index(*r.category);
    p.target_box = *r.box;
    preds.push_back(std::move(p));
  }
  return preds;
}

}  // namespace ssldet
