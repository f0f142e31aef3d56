#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "ssldet/commands.hpp"

using namespace ssldet;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() /
               ("ssldet_cli_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

nlohmann::json tiny_config_json(const std::string& root) {
  return nlohmann::json{
      {"dataset",
       {{"kind", "synthetic"},
        {"root", root},
        {"variant", "TINY"},
        {"classes", {"blue-square", "red-disc"}},
        {"num_images", 8},
        {"test_num_images", 6},
        {"image_side", 32},
        {"n_list", {3}},
        {"seed", 7}}},
      {"ssl",
       {{"epochs", 2}, {"batch_size", 4}, {"proj_dim", 8}, {"seed", 7}}},
      {"detector", {{"epochs", 3}, {"batch_size", 4}, {"seed", 7}}},
  };
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("config parsing validation") {
  ::unsetenv(kDataRootEnvVar);
  CHECK_NOTHROW(parse_experiment_config(tiny_config_json("/tmp/x")));

  SECTION("unknown keys are rejected at every level") {
    auto j = tiny_config_json("/tmp/x");
    j["surprise"] = 1;
    CHECK_THROWS_AS(parse_experiment_config(j), ConfigError);
    j = tiny_config_json("/tmp/x");
    j["dataset"]["surprise"] = 1;
    CHECK_THROWS_AS(parse_experiment_config(j), ConfigError);
    j = tiny_config_json("/tmp/x");
    j["ssl"]["surprise"] = 1;
    CHECK_THROWS_AS(parse_experiment_config(j), ConfigError);
  }
  SECTION("domain checks") {
    auto j = tiny_config_json("/tmp/x");
    j["dataset"]["kind"] = "imagenet";
    CHECK_THROWS_AS(parse_experiment_config(j), ConfigError);
    j = tiny_config_json("/tmp/x");
    j["dataset"]["variant"] = "HUGE";
    CHECK_THROWS_AS(parse_experiment_config(j), ConfigError);
    j = tiny_config_json("/tmp/x");
    j["dataset"]["train_fraction"] = 1.0;
    CHECK_THROWS_AS(parse_experiment_config(j), ConfigError);
    j = tiny_config_json("/tmp/x");
    j["detector"]["alpha"] = 1.5;
    CHECK_THROWS_AS(parse_experiment_config(j), ConfigError);
    j = tiny_config_json("/tmp/x");
    j["ssl"]["tau"] = 0.0;
    CHECK_THROWS_AS(parse_experiment_config(j), ConfigError);
    j = tiny_config_json("/tmp/x");
    j["detector"]["selection"] = "accuracy";
    CHECK_THROWS_AS(parse_experiment_config(j), ConfigError);
  }
  SECTION("environment variable overrides the dataset root") {
    ::setenv(kDataRootEnvVar, "/env/root", 1);
    ExperimentConfig cfg = parse_experiment_config(tiny_config_json("/tmp/x"));
    CHECK(cfg.dataset.root == "/env/root");
    ::unsetenv(kDataRootEnvVar);
    cfg = parse_experiment_config(tiny_config_json("/tmp/x"));
    CHECK(cfg.dataset.root == "/tmp/x");
  }
}

TEST_CASE("full command pipeline on a tiny synthetic experiment") {
  ::unsetenv(kDataRootEnvVar);
  const fs::path base = temp_dir("pipeline");
  const fs::path data = base / "data";
  ExperimentConfig cfg = parse_experiment_config(tiny_config_json(data));

  // synth
  const std::string manifest = cmd_synth(cfg, data.string(), false);
  REQUIRE(fs::exists(manifest));
  REQUIRE(fs::exists(data / "test_manifest.json"));
  CHECK(fs::exists(data / "config.json"));
  DatasetManifest m =
      manifest_from_json(nlohmann::json::parse(slurp(manifest)));
  CHECK(m.records.size() == 8);
  for (const auto& r : m.records) CHECK(fs::exists(r.image_ref));

  SECTION("write-once outputs refuse to overwrite without --force") {
    CHECK_THROWS_AS(cmd_synth(cfg, data.string(), false), ConfigError);
    CHECK_NOTHROW(cmd_synth(cfg, data.string(), true));
  }

  // pretrain
  const fs::path ssl_out = base / "ssl";
  const std::string ckpt = cmd_pretrain(cfg, ssl_out.string(), false);
  REQUIRE(fs::exists(ckpt));
  CHECK(fs::exists(ssl_out / "train_record.json"));
  CHECK(fs::exists(ssl_out / "train_record.csv"));
  CHECK(fs::exists(ssl_out / "config.json"));
  CHECK(load_checkpoint(ckpt).provenance == "ssl-pretrained");

  // train
  const fs::path det_out = base / "det";
  auto detectors = cmd_train(cfg, ckpt, det_out.string(), false);
  REQUIRE(detectors.size() == 1);
  CHECK(fs::path(detectors[0]).filename() == "detector_ssl_n3.ckpt");
  CHECK(fs::exists(det_out / "train_record_ssl_n3.json"));
  CHECK(fs::exists(det_out / "config.json"));

  SECTION("training from a missing checkpoint reports a missing artifact") {
    CHECK_THROWS_AS(
        cmd_train(cfg, (base / "nope.ckpt").string(), (base / "x").string(),
                  false),
        MissingArtifactError);
  }

  // eval (on the whole detector directory)
  const fs::path eval_out = base / "eval";
  auto reports = cmd_eval(cfg, det_out.string(), eval_out.string(), false);
  REQUIRE(reports.size() == 1);
  CHECK(reports[0].method == "ssl");
  CHECK(reports[0].n_per_class == 3);
  CHECK(fs::exists(eval_out / "report_ssl_n3.json"));
  const std::string csv = slurp(eval_out / "reports.csv");
  CHECK(csv.rfind("n,method,top1,top3,mean_iou,acc_iou_05,acc_iou_07", 0) == 0);
  CHECK(fs::exists(eval_out / "reports.txt"));
  CHECK(fs::exists(eval_out / "config.json"));

  // gradcam on two test records
  const fs::path cam_out = base / "cam";
  auto cams = cmd_gradcam(cfg, detectors[0], {0, 1}, cam_out.string(), false);
  REQUIRE(cams.size() == 2);
  CHECK(fs::exists(cam_out / "cam_0.png"));
  CHECK(fs::exists(cam_out / "cam_0.bin"));
  CHECK(fs::exists(cam_out / "cam_0.json"));
  CHECK(fs::exists(cam_out / "cam_1.png"));
  CHECK_THROWS_AS(cmd_gradcam(cfg, detectors[0], {999}, (base / "c2").string(),
                              false),
                  MissingArtifactError);

  fs::remove_all(base);
}

TEST_CASE("compare command reproduces a known mean-IoU difference") {
  const fs::path base = temp_dir("compare");
  const fs::path rep_dir = base / "reports";
  fs::create_directories(rep_dir);

  auto make = [](std::string method, double miou) {
    EvalReport r;
    r.method = std::move(method);
    r.dataset = "FULL";
    r.n_per_class = 3;
    r.seed = 7;
    r.top1 = 0.5;
    r.top3 = 0.6;
    r.mean_iou = miou;
    r.acc_iou_05 = 0.4;
    r.acc_iou_07 = 0.2;
    return r;
  };
  {
    std::ofstream(rep_dir / "report_ssl_n3.json")
        << to_json(make("ssl", 0.4169)).dump(2);
    std::ofstream(rep_dir / "report_baseline_n3.json")
        << to_json(make("baseline", 0.1685)).dump(2);
  }

  const fs::path out = base / "out";
  CompareOutput res = cmd_compare(rep_dir.string(), out.string(), false);
  REQUIRE(res.diffs.size() == 1);
  double miou_diff = 0.0;
  for (const auto& [name, v] : res.diffs[0].diffs)
    if (name == "mean_iou") miou_diff = v;
  CHECK(miou_diff == Catch::Approx(0.2484).margin(1e-4));

  const std::string csv = slurp(out / "compare.csv");
  CHECK(csv.rfind("n,metric,diff_ssl_minus_baseline", 0) == 0);
  CHECK(csv.find("mean_iou,0.248400") != std::string::npos);
  CHECK(fs::exists(out / "compare.txt"));
  CHECK(fs::exists(out / "diff_mean_iou.png"));
  CHECK(fs::exists(out / "diff_top1.png"));

  SECTION("missing baseline is a missing artifact") {
    fs::remove(rep_dir / "report_baseline_n3.json");
    CHECK_THROWS_AS(cmd_compare(rep_dir.string(), (base / "o2").string(), false),
                    MissingArtifactError);
  }
  SECTION("empty report directory is a missing artifact") {
    const fs::path empty = base / "empty";
    fs::create_directories(empty);
    CHECK_THROWS_AS(cmd_compare(empty.string(), (base / "o3").string(), false),
                    MissingArtifactError);
  }
  fs::remove_all(base);
}
