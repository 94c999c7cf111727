#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "nfmpc/controller.hpp"
#include "nfmpc/envs.hpp"

namespace nfmpc {

struct ExperimentConfig {
  std::vector<std::string> controllers = {"mppi"};
  std::string env_kind = "random-dynamic";
  std::vector<int> sample_counts = {1024};
  int episodes = 32;  // rollouts per (controller, N)
  int episode_length = 200;
  std::uint64_t seed = 0;  // base seed of the fixed environment set
  std::string flow_checkpoint;
  std::string shift_checkpoint;
  std::string out_dir = "out";

  ControllerConfig controller;  // shared hyperparameters (H, beta, gamma, ...)
  EnvGenParams env;
  CostWeights costs;

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::string& path);
};

struct EpisodeRecord {
  std::string controller;
  int samples = 0;
  int episode = 0;
  std::uint64_t env_seed = 0;
  Outcome outcome = Outcome::kTimeout;
  double total_cost = 0.0;
  int steps = 0;
  StepTiming timing;  // summed over the episode; excluded from episodes.jsonl
  std::vector<PlanarState> trajectory;
};

struct MetricsRow {
  std::string controller;
  int samples = 0;
  int episodes = 0;
  int successes = 0;
  double success_rate = 0.0;
  double cost_q1 = 0.0, cost_median = 0.0, cost_q3 = 0.0;  // successful episodes
  double mean_step_ms = 0.0;
};

struct MetricsSummary {
  std::vector<MetricsRow> rows;
};

struct ExperimentOutput {
  MetricsSummary summary;
  std::vector<EpisodeRecord> records;
};

/// Linear-interpolation quantile of a sorted copy of v, p in [0, 1].
double quantile(std::vector<double> v, double p);

MetricsSummary aggregate(const std::vector<EpisodeRecord>& records);

/// One full episode with a prebuilt controller on a fixed environment.
EpisodeRecord run_eval_episode(Controller& controller, const EnvContext& env,
                               const CostWeights& costs, int episode_length,
                               std::uint64_t episode_seed);

/// Runs every (controller, N, episode) combination on the shared fixed
/// environment sequence. Missing checkpoints fail before any episode runs.
ExperimentOutput run_experiment(const ExperimentConfig& cfg);

/// summary.csv + episodes.jsonl + timing.csv + config.resolved.json.
/// episodes.jsonl carries only the deterministic fields (seed, outcome, cost,
/// trajectory); wall-clock timings go to timing.csv so that repeated runs
/// produce byte-identical episode records.
void emit_outputs(const ExperimentOutput& out, const ExperimentConfig& cfg,
                  const std::string& dir);

nlohmann::json episode_record_json(const EpisodeRecord& rec);
EpisodeRecord episode_record_from_json(const nlohmann::json& j);

/// Reads episodes.jsonl (and timing.csv when present) back into records.
std::vector<EpisodeRecord> load_episode_records(const std::string& episodes_path,
                                                const std::string& timing_path = "");

struct TimingRow {
  std::string controller;
  int samples = 0;
  double mean_step_ms = 0.0;
  double ratio_vs_mppi = 0.0;
  bool has_ratio = false;
};

/// Mean per-step wall clock per controller and the ratio to the Gaussian-MPPI
/// baseline at matched sample counts (omitted with a warning when the
/// baseline rows are missing).
std::vector<TimingRow> timing_report(const MetricsSummary& summary, std::string* warning);

std::string summary_to_csv(const MetricsSummary& summary);

}  // namespace nfmpc
