#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "nfmpc/bench.hpp"
#include "nfmpc/training.hpp"
#include "nfmpc/verify.hpp"

namespace {

using nfmpc::ExperimentConfig;

void print_summary(const nfmpc::MetricsSummary& summary) {
  std::printf("%-10s %6s %9s %12s %12s %12s %12s\n", "controller", "N", "success", "cost_q1",
              "cost_med", "cost_q3", "step_ms");
  for (const auto& row : summary.rows) {
    std::printf("%-10s %6d %8.1f%% %12.3f %12.3f %12.3f %12.4f\n", row.controller.c_str(),
                row.samples, 100.0 * row.success_rate, row.cost_q1, row.cost_median, row.cost_q3,
                row.mean_step_ms);
  }
}

void print_timing(const nfmpc::MetricsSummary& summary) {
  std::string warning;
  const auto rows = nfmpc::timing_report(summary, &warning);
  std::printf("%-10s %6s %12s %12s\n", "controller", "N", "step_ms", "vs_mppi");
  for (const auto& row : rows) {
    if (row.has_ratio)
      std::printf("%-10s %6d %12.4f %11.2fx\n", row.controller.c_str(), row.samples,
                  row.mean_step_ms, row.ratio_vs_mppi);
    else
      std::printf("%-10s %6d %12.4f %12s\n", row.controller.c_str(), row.samples,
                  row.mean_step_ms, "-");
  }
  if (!warning.empty()) std::fprintf(stderr, "warning: %s\n", warning.c_str());
}

nlohmann::json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw nfmpc::ConfigError("cannot open config: " + path);
  nlohmann::json j;
  in >> j;
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent-space MPPI with a learned normalizing-flow sampling distribution"};
  app.require_subcommand(1);

  std::string config_path, out_dir, records_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::vector<int> samples;
  std::vector<std::string> controllers;
  int episodes = -1;

  auto add_common = [&](CLI::App* sub, bool config_required) {
    sub->add_option("--config", config_path, "JSON configuration file")
        ->required(config_required);
    sub->add_option_function<std::uint64_t>(
           "--seed", [&](std::uint64_t s) { seed = s; seed_set = true; }, "seed override");
    sub->add_option("--out", out_dir, "output directory override");
    sub->add_option("--episodes", episodes, "episode count override");
  };

  CLI::App* train_cmd = app.add_subcommand("train", "train the flow and shift model");
  add_common(train_cmd, true);

  CLI::App* eval_cmd = app.add_subcommand("eval", "run a seeded evaluation sweep");
  add_common(eval_cmd, true);
  eval_cmd->add_option("--samples", samples, "sample counts override");
  eval_cmd->add_option("--controller", controllers, "controller kinds override");

  CLI::App* verify_cmd = app.add_subcommand("verify", "run the oracle and property suites");
  verify_cmd->add_option("--out", out_dir, "scratch directory");

  CLI::App* timing_cmd = app.add_subcommand("timing", "per-step wall-clock report");
  add_common(timing_cmd, false);
  timing_cmd->add_option("--records", records_dir,
                         "existing output directory (episodes.jsonl + timing.csv)");
  timing_cmd->add_option("--samples", samples, "sample counts override");
  timing_cmd->add_option("--controller", controllers, "controller kinds override");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(train_cmd)) {
      nfmpc::TrainConfig cfg = nfmpc::TrainConfig::from_json(load_json(config_path));
      if (seed_set) cfg.seed = seed;
      if (episodes >= 0) cfg.episodes = episodes;
      const std::string dir = out_dir.empty() ? "train_out" : out_dir;
      nfmpc::TrainResult res = nfmpc::train(cfg, dir);
      std::printf("episodes run: %d%s\n", res.episodes_run, res.diverged ? " (diverged)" : "");
      if (res.best_val_success >= 0.0)
        std::printf("best validation: success %.1f%%, median cost %.3f\n",
                    100.0 * res.best_val_success, res.best_val_median_cost);
      std::printf("flow checkpoint: %s\n", res.flow_checkpoint.c_str());
      if (!res.shift_checkpoint.empty())
        std::printf("shift checkpoint: %s\n", res.shift_checkpoint.c_str());
      std::printf("learning curve: %s\n", res.learning_curve_path.c_str());
      return res.diverged ? 1 : 0;
    }

    if (app.got_subcommand(eval_cmd)) {
      ExperimentConfig cfg = ExperimentConfig::from_json(load_json(config_path));
      if (seed_set) cfg.seed = seed;
      if (!samples.empty()) cfg.sample_counts = samples;
      if (!controllers.empty()) cfg.controllers = controllers;
      if (episodes >= 0) cfg.episodes = episodes;
      if (!out_dir.empty()) cfg.out_dir = out_dir;
      nfmpc::ExperimentOutput out = nfmpc::run_experiment(cfg);
      nfmpc::emit_outputs(out, cfg, cfg.out_dir);
      print_summary(out.summary);
      std::printf("outputs written to %s\n", cfg.out_dir.c_str());
      return 0;
    }

    if (app.got_subcommand(verify_cmd)) {
      const std::string scratch =
          out_dir.empty()
              ? (std::filesystem::temp_directory_path() / "nfmpc_verify").string()
              : out_dir;
      const auto results = nfmpc::verify::run_fast_suite(scratch);
      bool all_passed = true;
      for (const auto& r : results) {
        std::printf("[%s] %s: %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(),
                    r.detail.c_str());
        all_passed = all_passed && r.passed;
      }
      return all_passed ? 0 : 1;
    }

    if (app.got_subcommand(timing_cmd)) {
      nfmpc::MetricsSummary summary;
      if (!records_dir.empty()) {
        namespace fs = std::filesystem;
        const auto records = nfmpc::load_episode_records(
            (fs::path(records_dir) / "episodes.jsonl").string(),
            (fs::path(records_dir) / "timing.csv").string());
        summary = nfmpc::aggregate(records);
      } else {
        if (config_path.empty())
          throw nfmpc::ConfigError("timing needs --config or --records");
        ExperimentConfig cfg = ExperimentConfig::from_json(load_json(config_path));
        if (seed_set) cfg.seed = seed;
        if (!samples.empty()) cfg.sample_counts = samples;
        if (!controllers.empty()) cfg.controllers = controllers;
        if (episodes >= 0) cfg.episodes = episodes;
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        nfmpc::ExperimentOutput out = nfmpc::run_experiment(cfg);
        nfmpc::emit_outputs(out, cfg, cfg.out_dir);
        summary = out.summary;
      }
      print_timing(summary);
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
