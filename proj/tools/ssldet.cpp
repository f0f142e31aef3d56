#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ssldet/commands.hpp"

namespace {

ssldet::ExperimentConfig load_cfg(const std::string& config_path,
                                  long long seed_override, bool has_seed) {
  ssldet::ExperimentConfig cfg =
      config_path.empty() ? ssldet::parse_experiment_config(nlohmann::json::object())
                          : ssldet::load_experiment_config(config_path);
  if (has_seed) {
    cfg.dataset.seed = seed_override;
    cfg.ssl.seed = seed_override;
    cfg.detector.seed = seed_override;
    cfg.snapshot["seed_override"] = seed_override;
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"self-supervised detector toolkit"};
  app.require_subcommand(1);
  app.fallthrough(true);

  std::string config_path;
  std::string out_dir;
  long long seed = 0;
  bool force = false;
  app.add_option("--config", config_path, "experiment config (JSON)");
  app.add_option("--out", out_dir, "output directory");
  auto* seed_opt = app.add_option("--seed", seed, "override all seeds");
  app.add_flag("--force", force, "overwrite non-empty output directories");

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  auto* pretrain =
      app.add_subcommand("pretrain", "contrastive backbone pre-training");

  std::string ckpt_path;
  auto* train = app.add_subcommand("train", "frozen-backbone detector probes");
  train->add_option("--checkpoint", ckpt_path, "backbone checkpoint")
      ->required();

  std::string detector_path;
  auto* eval = app.add_subcommand("eval", "evaluate detector(s) on a test set");
  eval->add_option("--detector", detector_path,
                   "detector file or directory of detector files")
      ->required();

  std::string cam_detector;
  std::vector<int> cam_records;
  auto* gradcam = app.add_subcommand("gradcam", "class activation heatmaps");
  gradcam->add_option("--detector", cam_detector, "detector file")->required();
  gradcam->add_option("--records", cam_records, "test record indices")
      ->required();

  std::string report_dir;
  auto* compare =
      app.add_subcommand("compare", "ssl-vs-baseline metric differences");
  compare->add_option("--reports", report_dir, "directory of report_*.json")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    ssldet::ExperimentConfig cfg =
        load_cfg(config_path, seed, seed_opt->count() > 0);
    const std::string out = out_dir.empty() ? cfg.output_dir : out_dir;

    if (synth->parsed()) {
      std::printf("wrote %s\n", ssldet::cmd_synth(cfg, out, force).c_str());
    } else if (pretrain->parsed()) {
      std::printf("wrote %s\n", ssldet::cmd_pretrain(cfg, out, force).c_str());
    } else if (train->parsed()) {
      for (const auto& p : ssldet::cmd_train(cfg, ckpt_path, out, force))
        std::printf("wrote %s\n", p.c_str());
    } else if (eval->parsed()) {
      auto reports = ssldet::cmd_eval(cfg, detector_path, out, force);
      std::printf("%s", ssldet::render_comparison_table(reports).c_str());
    } else if (gradcam->parsed()) {
      for (const auto& p :
           ssldet::cmd_gradcam(cfg, cam_detector, cam_records, out, force))
        std::printf("wrote %s\n", p.c_str());
    } else if (compare->parsed()) {
      auto result = ssldet::cmd_compare(report_dir, out, force);
      std::printf("compared %zu experiment cells -> %s\n", result.diffs.size(),
                  out.c_str());
    }
  } catch (const ssldet::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const ssldet::MissingArtifactError& e) {
    std::fprintf(stderr, "missing artifact: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
