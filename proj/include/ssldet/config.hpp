#pragma once

#include <cstdlib>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssldet/augment.hpp"
#include "ssldet/common.hpp"
#include "ssldet/train.hpp"

namespace ssldet {

inline constexpr const char* kDataRootEnvVar = "SSLDET_DATA_ROOT";

struct DatasetConfig {
  std::string kind = "synthetic";  // synthetic | voc | image-dir
  std::string root;
  std::string variant = "TINY";  // TINY | FULL
  std::vector<std::string> classes;
  int num_images = 64;
  int test_num_images = 32;
  int image_side = 224;
  std::vector<int> n_list;
  double train_fraction = 0.8;
  std::int64_t seed = 7;
  std::string test_manifest;  // optional explicit test manifest path
};

struct EvalConfig {
  std::vector<double> thresholds = {0.5, 0.7};
  std::vector<int> topn = {1, 3, 5};
};

struct ExperimentConfig {
  DatasetConfig dataset;
  TrainConfig ssl = TrainConfig::ssl_defaults();
  TrainConfig detector = TrainConfig::detector_defaults();
  EvalConfig eval;
  std::string output_dir = "out";
  nlohmann::json snapshot;  // the validated raw document, for provenance
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j,
                           const std::set<std::string>& known,
                           const std::string& where) {
  for (const auto& [key, _] : j.items())
    if (!known.count(key))
      throw ConfigError("config: unknown key '" + key + "' in " + where);
}

template <typename T>
void maybe(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline void parse_range(const nlohmann::json& j, const char* key, double& lo,
                        double& hi, const std::string& where) {
  if (!j.contains(key)) return;
  auto v = j.at(key).get<std::vector<double>>();
  if (v.size() != 2)
    throw ConfigError("config: " + where + "." + key + " must be [min,max]");
  lo = v[0];
  hi = v[1];
}

inline AugmentationPolicy parse_policy(const nlohmann::json& j,
                                       AugmentationPolicy base,
                                       const std::string& where) {
  reject_unknown(j,
                 {"crop_enabled", "crop_scale", "crop_aspect", "flip_prob",
                  "jitter_prob", "jitter_strength", "grayscale_prob",
                  "blur_prob", "blur_sigma", "erase_prob", "erase_area",
                  "erase_aspect", "erase_fill"},
                 where);
  maybe(j, "crop_enabled", base.crop_enabled);
  parse_range(j, "crop_scale", base.crop_scale_min, base.crop_scale_max, where);
  parse_range(j, "crop_aspect", base.crop_aspect_min, base.crop_aspect_max,
              where);
  maybe(j, "flip_prob", base.flip_prob);
  maybe(j, "jitter_prob", base.jitter_prob);
  maybe(j, "jitter_strength", base.jitter_strength);
  maybe(j, "grayscale_prob", base.grayscale_prob);
  parse_range(j, "blur_sigma", base.blur_sigma_min, base.blur_sigma_max, where);
  maybe(j, "blur_prob", base.blur_prob);
  maybe(j, "erase_prob", base.erase_prob);
  parse_range(j, "erase_area", base.erase_area_min, base.erase_area_max, where);
  parse_range(j, "erase_aspect", base.erase_aspect_min, base.erase_aspect_max,
              where);
  maybe(j, "erase_fill", base.erase_fill);
  base.validate();
  return base;
}

inline void parse_train_section(const nlohmann::json& j, TrainConfig& cfg,
                                const std::string& where) {
  reject_unknown(j,
                 {"epochs", "batch_size", "learning_rate", "tau", "alpha",
                  "seed", "patience", "backbone", "proj_hidden", "proj_dim",
                  "augment", "selection"},
                 where);
  maybe(j, "epochs", cfg.max_epochs);
  maybe(j, "batch_size", cfg.batch_size);
  maybe(j, "learning_rate", cfg.learning_rate);
  maybe(j, "tau", cfg.tau);
  maybe(j, "alpha", cfg.alpha);
  maybe(j, "seed", cfg.seed);
  if (j.contains("patience") && !j["patience"].is_null())
    cfg.patience = j["patience"].get<int>();
  maybe(j, "backbone", cfg.backbone_arch);
  maybe(j, "proj_hidden", cfg.proj_hidden);
  maybe(j, "proj_dim", cfg.proj_dim);
  maybe(j, "selection", cfg.selection);
  if (j.contains("augment"))
    cfg.augment = parse_policy(j["augment"], cfg.augment, where + ".augment");

  if (cfg.max_epochs <= 0 || cfg.batch_size <= 0 || cfg.learning_rate <= 0.0)
    throw ConfigError("config: " + where +
                      ": epochs/batch_size/learning_rate must be positive");
  if (cfg.tau <= 0.0)
    throw ConfigError("config: " + where + ": tau must be positive");
  if (!(cfg.alpha >= 0.0 && cfg.alpha <= 1.0))
    throw ConfigError("config: " + where + ": alpha must be in [0,1]");
  if (cfg.selection != "loss" && cfg.selection != "mean_iou")
    throw ConfigError("config: " + where + ": selection must be loss|mean_iou");
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  detail::reject_unknown(j, {"dataset", "ssl", "detector", "eval", "output_dir"},
                         "top level");
  ExperimentConfig cfg;
  cfg.snapshot = j;

  if (j.contains("dataset")) {
    const auto& d = j["dataset"];
    detail::reject_unknown(
        d,
        {"kind", "root", "variant", "classes", "num_images", "test_num_images",
         "image_side", "n_list", "train_fraction", "seed", "test_manifest"},
        "dataset");
    detail::maybe(d, "kind", cfg.dataset.kind);
    detail::maybe(d, "root", cfg.dataset.root);
    detail::maybe(d, "variant", cfg.dataset.variant);
    detail::maybe(d, "classes", cfg.dataset.classes);
    detail::maybe(d, "num_images", cfg.dataset.num_images);
    detail::maybe(d, "test_num_images", cfg.dataset.test_num_images);
    detail::maybe(d, "image_side", cfg.dataset.image_side);
    detail::maybe(d, "n_list", cfg.dataset.n_list);
    detail::maybe(d, "train_fraction", cfg.dataset.train_fraction);
    detail::maybe(d, "seed", cfg.dataset.seed);
    detail::maybe(d, "test_manifest", cfg.dataset.test_manifest);
    if (cfg.dataset.kind != "synthetic" && cfg.dataset.kind != "voc" &&
        cfg.dataset.kind != "image-dir")
      throw ConfigError("config: dataset.kind must be synthetic|voc|image-dir");
    if (cfg.dataset.variant != "TINY" && cfg.dataset.variant != "FULL")
      throw ConfigError("config: dataset.variant must be TINY|FULL");
    if (!(cfg.dataset.train_fraction > 0.0 && cfg.dataset.train_fraction < 1.0))
      throw ConfigError("config: dataset.train_fraction must be in (0,1)");
  }
  if (j.contains("ssl"))
    detail::parse_train_section(j["ssl"], cfg.ssl, "ssl");
  if (j.contains("detector"))
    detail::parse_train_section(j["detector"], cfg.detector, "detector");
  cfg.ssl.phase = Phase::ssl;
  cfg.detector.phase = Phase::detector;
  cfg.ssl.image_side = cfg.dataset.image_side;
  cfg.detector.image_side = cfg.dataset.image_side;

  if (j.contains("eval")) {
    const auto& e = j["eval"];
    detail::reject_unknown(e, {"thresholds", "topn"}, "eval");
    detail::maybe(e, "thresholds", cfg.eval.thresholds);
    detail::maybe(e, "topn", cfg.eval.topn);
    for (double t : cfg.eval.thresholds)
      if (!(t > 0.0 && t < 1.0))
        throw ConfigError("config: eval.thresholds must be in (0,1)");
  }
  detail::maybe(j, "output_dir", cfg.output_dir);

  // Environment override for the dataset root.
  if (const char* env = std::getenv(kDataRootEnvVar); env && *env)
    cfg.dataset.root = env;
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON in ") + path + ": " +
                      e.what());
  }
  return parse_experiment_config(j);
}

}  // namespace ssldet
