#include "nfmpc/bench.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include <nlohmann/json.hpp>

#include "nfmpc/flow.hpp"

namespace nfmpc {

nlohmann::json ExperimentConfig::to_json() const {
  return nlohmann::json{
      {"controllers", controllers},
      {"env_kind", env_kind},
      {"sample_counts", sample_counts},
      {"episodes", episodes},
      {"episode_length", episode_length},
      {"seed", seed},
      {"flow_checkpoint", flow_checkpoint},
      {"shift_checkpoint", shift_checkpoint},
      {"out_dir", out_dir},
      {"controller",
       {{"horizon", controller.horizon},
        {"temperature", controller.temperature},
        {"step_size", controller.step_size},
        {"init_cov", controller.init_cov},
        {"latent_cov", controller.latent_cov},
        {"gamma_cov", controller.gamma_cov},
        {"adapt_covariance", controller.adapt_covariance},
        {"flow_penalty", controller.flow_penalty},
        {"spline_degree", controller.spline_degree},
        {"spline_points", controller.spline_points},
        {"shift", controller.shift},
        {"deterministic_action", controller.deterministic_action},
        {"warm_start_iters", controller.warm_start_iters},
        {"cost_normalization", controller.cost_normalization},
        {"conditional", controller.conditional},
        {"condition_on_state", controller.condition_on_state},
        {"include_obstacles", controller.include_obstacles}}},
      {"env", env.to_json()},
      {"cost_weights",
       {{"goal", costs.goal},
        {"bound", costs.bound},
        {"collision", costs.collision},
        {"control", costs.control},
        {"collision_margin", costs.collision_margin}}}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  if (j.contains("controllers")) cfg.controllers = j.at("controllers").get<std::vector<std::string>>();
  cfg.env_kind = j.value("env_kind", cfg.env_kind);
  if (j.contains("sample_counts")) cfg.sample_counts = j.at("sample_counts").get<std::vector<int>>();
  cfg.episodes = j.value("episodes", cfg.episodes);
  cfg.episode_length = j.value("episode_length", cfg.episode_length);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.flow_checkpoint = j.value("flow_checkpoint", cfg.flow_checkpoint);
  cfg.shift_checkpoint = j.value("shift_checkpoint", cfg.shift_checkpoint);
  cfg.out_dir = j.value("out_dir", cfg.out_dir);
  if (j.contains("controller")) {
    const auto& c = j.at("controller");
    cfg.controller.horizon = c.value("horizon", cfg.controller.horizon);
    cfg.controller.temperature = c.value("temperature", cfg.controller.temperature);
    cfg.controller.step_size = c.value("step_size", cfg.controller.step_size);
    cfg.controller.init_cov = c.value("init_cov", cfg.controller.init_cov);
    cfg.controller.latent_cov = c.value("latent_cov", cfg.controller.latent_cov);
    cfg.controller.gamma_cov = c.value("gamma_cov", cfg.controller.gamma_cov);
    cfg.controller.adapt_covariance = c.value("adapt_covariance", cfg.controller.adapt_covariance);
    cfg.controller.flow_penalty = c.value("flow_penalty", cfg.controller.flow_penalty);
    cfg.controller.spline_degree = c.value("spline_degree", cfg.controller.spline_degree);
    cfg.controller.spline_points = c.value("spline_points", cfg.controller.spline_points);
    cfg.controller.shift = c.value("shift", cfg.controller.shift);
    cfg.controller.deterministic_action =
        c.value("deterministic_action", cfg.controller.deterministic_action);
    cfg.controller.warm_start_iters = c.value("warm_start_iters", cfg.controller.warm_start_iters);
    cfg.controller.cost_normalization =
        c.value("cost_normalization", cfg.controller.cost_normalization);
    cfg.controller.conditional = c.value("conditional", cfg.controller.conditional);
    cfg.controller.condition_on_state =
        c.value("condition_on_state", cfg.controller.condition_on_state);
    cfg.controller.include_obstacles =
        c.value("include_obstacles", cfg.controller.include_obstacles);
  }
  if (j.contains("env")) cfg.env = EnvGenParams::from_json(j.at("env"));
  if (j.contains("cost_weights")) {
    const auto& w = j.at("cost_weights");
    cfg.costs.goal = w.value("goal", cfg.costs.goal);
    cfg.costs.bound = w.value("bound", cfg.costs.bound);
    cfg.costs.collision = w.value("collision", cfg.costs.collision);
    cfg.costs.control = w.value("control", cfg.costs.control);
    cfg.costs.collision_margin = w.value("collision_margin", cfg.costs.collision_margin);
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path);
  nlohmann::json j;
  in >> j;
  return from_json(j);
}

double quantile(std::vector<double> v, double p) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double idx = p * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(idx));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = idx - static_cast<double>(lo);
  return v[lo] * (1.0 - frac) + v[hi] * frac;
}

MetricsSummary aggregate(const std::vector<EpisodeRecord>& records) {
  MetricsSummary summary;
  for (const EpisodeRecord& rec : records) {
    auto it = std::find_if(summary.rows.begin(), summary.rows.end(), [&](const MetricsRow& r) {
      return r.controller == rec.controller && r.samples == rec.samples;
    });
    if (it == summary.rows.end()) {
      summary.rows.push_back(MetricsRow{rec.controller, rec.samples});
      it = std::prev(summary.rows.end());
    }
    it->episodes += 1;
    if (rec.outcome == Outcome::kSuccess) it->successes += 1;
  }
  for (MetricsRow& row : summary.rows) {
    std::vector<double> costs;
    double step_seconds = 0.0;
    long steps = 0;
    for (const EpisodeRecord& rec : records) {
      if (rec.controller != row.controller || rec.samples != row.samples) continue;
      if (rec.outcome == Outcome::kSuccess) costs.push_back(rec.total_cost);
      step_seconds += rec.timing.total();
      steps += rec.steps;
    }
    row.success_rate = row.episodes > 0 ? static_cast<double>(row.successes) / row.episodes : 0.0;
    // no successful episodes: quartiles are reported as zero, not NaN
    row.cost_q1 = costs.empty() ? 0.0 : quantile(costs, 0.25);
    row.cost_median = costs.empty() ? 0.0 : quantile(costs, 0.5);
    row.cost_q3 = costs.empty() ? 0.0 : quantile(costs, 0.75);
    row.mean_step_ms = steps > 0 ? 1000.0 * step_seconds / static_cast<double>(steps) : 0.0;
  }
  return summary;
}

EpisodeRecord run_eval_episode(Controller& controller, const EnvContext& env,
                               const CostWeights& costs, int episode_length,
                               std::uint64_t episode_seed) {
  EpisodeRecord rec;
  rec.controller = controller.kind();
  rec.env_seed = episode_seed;

  EnvContext ctx = env;
  Rng noise_rng(episode_seed * 0x2545f4914f6cdd1dull + 1);
  Rng drift_rng(episode_seed * 0x2545f4914f6cdd1dull + 2);
  controller.reset(ctx, ctx.start, episode_seed);

  PlanarState x = ctx.start;
  rec.trajectory.push_back(x);
  bool arrived = false, collided = false;
  for (int t = 0; t < episode_length; ++t) {
    if (ctx.dynamic && t > 0) obstacle_drift(ctx, x.px, x.py, /*clearance=*/1.0, drift_rng);
    StepResult step = controller.step(x, ctx);
    rec.timing.sample_s += step.timing.sample_s;
    rec.timing.rollout_s += step.timing.rollout_s;
    rec.timing.update_s += step.timing.update_s;
    rec.timing.flow_s += step.timing.flow_s;
    rec.steps += 1;
    if (!arrived && !collided)
      rec.total_cost += stage_cost(x, step.action[0], step.action[1], ctx, costs);
    x = double_integrator_step(x, step.action[0], step.action[1], kPlanarDt, kPlanarNoiseSigma,
                               &noise_rng);
    rec.trajectory.push_back(x);
    if (!arrived && !collided) {
      if (sdf_query(ctx, x.px, x.py) < 0.0)
        collided = true;
      else if (std::hypot(x.px - ctx.goal_x, x.py - ctx.goal_y) <= kGoalTolerance)
        arrived = true;
    }
  }
  rec.outcome = collided ? Outcome::kCollision : (arrived ? Outcome::kSuccess : Outcome::kTimeout);
  return rec;
}

ExperimentOutput run_experiment(const ExperimentConfig& cfg) {
  check_config(!cfg.sample_counts.empty(), "sample count list must be nonempty");

  const bool needs_flow =
      std::any_of(cfg.controllers.begin(), cfg.controllers.end(),
                  [](const std::string& k) { return k == "flowmppi" || k == "nfmpc"; });
  const bool needs_shift = std::any_of(cfg.controllers.begin(), cfg.controllers.end(),
                                       [](const std::string& k) { return k == "nfmpc"; });

  std::optional<FlowModel> flow;
  std::optional<ShiftModel> shift;
  if (needs_flow) {
    if (cfg.flow_checkpoint.empty() || !std::filesystem::exists(cfg.flow_checkpoint))
      throw ConfigError("missing flow checkpoint: '" + cfg.flow_checkpoint + "'");
    flow.emplace(FlowModel::load(cfg.flow_checkpoint));
  }
  if (needs_shift && cfg.controller.shift != "identity") {
    if (cfg.shift_checkpoint.empty() || !std::filesystem::exists(cfg.shift_checkpoint))
      throw ConfigError("missing shift checkpoint: '" + cfg.shift_checkpoint + "'");
    shift.emplace(ShiftModel::load(cfg.shift_checkpoint));
  }

  // the fixed environment set every controller is evaluated on
  const EnvKind kind = env_kind_from_string(cfg.env_kind);
  std::vector<EnvContext> envs;
  for (int k = 0; k < cfg.episodes; ++k)
    envs.push_back(generate_env(kind, cfg.seed + static_cast<std::uint64_t>(k), cfg.env));

  ExperimentOutput out;
  for (const std::string& kind_name : cfg.controllers) {
    for (int n : cfg.sample_counts) {
      ControllerConfig ctrl = cfg.controller;
      ctrl.kind = kind_name;
      ctrl.samples = n;
      if (kind_name == "mppi" && ctrl.shift.empty()) ctrl.shift = "standard";
      auto controller = make_controller(ctrl, flow ? &*flow : nullptr,
                                        shift ? &*shift : nullptr, cfg.costs);
      for (int k = 0; k < cfg.episodes; ++k) {
        EpisodeRecord rec = run_eval_episode(*controller, envs[k], cfg.costs,
                                             cfg.episode_length,
                                             cfg.seed + static_cast<std::uint64_t>(k));
        rec.samples = n;
        rec.episode = k;
        out.records.push_back(std::move(rec));
      }
    }
  }
  out.summary = aggregate(out.records);
  return out;
}

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::string summary_to_csv(const MetricsSummary& summary) {
  std::ostringstream os;
  os << "controller,N,success_rate,cost_q1,cost_median,cost_q3,mean_step_ms\n";
  for (const MetricsRow& row : summary.rows) {
    os << row.controller << ',' << row.samples << ',' << fmt(row.success_rate) << ','
       << fmt(row.cost_q1) << ',' << fmt(row.cost_median) << ',' << fmt(row.cost_q3) << ','
       << fmt(row.mean_step_ms) << '\n';
  }
  return os.str();
}

nlohmann::json episode_record_json(const EpisodeRecord& rec) {
  nlohmann::json traj = nlohmann::json::array();
  for (const PlanarState& s : rec.trajectory) traj.push_back({s.px, s.py, s.vx, s.vy});
  return nlohmann::json{{"controller", rec.controller}, {"samples", rec.samples},
                        {"episode", rec.episode},       {"seed", rec.env_seed},
                        {"outcome", to_string(rec.outcome)}, {"total_cost", rec.total_cost},
                        {"steps", rec.steps},           {"trajectory", traj}};
}

EpisodeRecord episode_record_from_json(const nlohmann::json& j) {
  EpisodeRecord rec;
  rec.controller = j.at("controller").get<std::string>();
  rec.samples = j.at("samples").get<int>();
  rec.episode = j.at("episode").get<int>();
  rec.env_seed = j.at("seed").get<std::uint64_t>();
  const std::string outcome = j.at("outcome").get<std::string>();
  rec.outcome = outcome == "success" ? Outcome::kSuccess
              : outcome == "collision" ? Outcome::kCollision : Outcome::kTimeout;
  rec.total_cost = j.at("total_cost").get<double>();
  rec.steps = j.at("steps").get<int>();
  for (const auto& s : j.at("trajectory"))
    rec.trajectory.push_back({s.at(0).get<double>(), s.at(1).get<double>(),
                              s.at(2).get<double>(), s.at(3).get<double>()});
  return rec;
}

void emit_outputs(const ExperimentOutput& out, const ExperimentConfig& cfg,
                  const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory: " + dir);

  const std::string episodes_path = (fs::path(dir) / "episodes.jsonl").string();
  {
    std::ofstream f(episodes_path);
    if (!f) throw ConfigError("cannot write " + episodes_path);
    for (const EpisodeRecord& rec : out.records) f << episode_record_json(rec).dump() << '\n';
    if (!f) throw ConfigError("write failed: " + episodes_path);
  }
  const std::string timing_path = (fs::path(dir) / "timing.csv").string();
  {
    std::ofstream f(timing_path);
    if (!f) throw ConfigError("cannot write " + timing_path);
    f << "controller,N,episode,steps,sample_s,rollout_s,update_s,flow_s\n";
    for (const EpisodeRecord& rec : out.records)
      f << rec.controller << ',' << rec.samples << ',' << rec.episode << ',' << rec.steps << ','
        << fmt(rec.timing.sample_s) << ',' << fmt(rec.timing.rollout_s) << ','
        << fmt(rec.timing.update_s) << ',' << fmt(rec.timing.flow_s) << '\n';
  }
  const std::string summary_path = (fs::path(dir) / "summary.csv").string();
  {
    std::ofstream f(summary_path);
    if (!f) throw ConfigError("cannot write " + summary_path);
    f << summary_to_csv(out.summary);
  }
  const std::string config_path = (fs::path(dir) / "config.resolved.json").string();
  {
    std::ofstream f(config_path);
    if (!f) throw ConfigError("cannot write " + config_path);
    f << cfg.to_json().dump(2) << '\n';
  }
}

std::vector<EpisodeRecord> load_episode_records(const std::string& episodes_path,
                                                const std::string& timing_path) {
  std::ifstream in(episodes_path);
  if (!in) throw ConfigError("cannot open " + episodes_path);
  std::vector<EpisodeRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    records.push_back(episode_record_from_json(nlohmann::json::parse(line)));
  }
  if (!timing_path.empty()) {
    std::ifstream tf(timing_path);
    if (!tf) throw ConfigError("cannot open " + timing_path);
    std::string header;
    std::getline(tf, header);
    std::size_t i = 0;
    while (std::getline(tf, line) && i < records.size()) {
      if (line.empty()) continue;
      std::istringstream row(line);
      std::string field;
      std::vector<std::string> fields;
      while (std::getline(row, field, ',')) fields.push_back(field);
      if (fields.size() != 8) throw ConfigError("malformed timing.csv row: " + line);
      records[i].timing.sample_s = std::stod(fields[4]);
      records[i].timing.rollout_s = std::stod(fields[5]);
      records[i].timing.update_s = std::stod(fields[6]);
      records[i].timing.flow_s = std::stod(fields[7]);
      ++i;
    }
  }
  return records;
}

std::vector<TimingRow> timing_report(const MetricsSummary& summary, std::string* warning) {
  std::vector<TimingRow> rows;
  bool missing_baseline = false;
  for (const MetricsRow& row : summary.rows) {
    TimingRow tr{row.controller, row.samples, row.mean_step_ms, 0.0, false};
    if (row.controller != "mppi") {
      auto it = std::find_if(summary.rows.begin(), summary.rows.end(), [&](const MetricsRow& r) {
        return r.controller == "mppi" && r.samples == row.samples;
      });
      if (it != summary.rows.end() && it->mean_step_ms > 0.0) {
        tr.ratio_vs_mppi = row.mean_step_ms / it->mean_step_ms;
        tr.has_ratio = true;
      } else {
        missing_baseline = true;
      }
    }
    rows.push_back(tr);
  }
  if (warning) {
    *warning = missing_baseline
                   ? "mppi baseline rows absent at matched N; ratios omitted"
                   : "";
  }
  return rows;
}

}  // namespace nfmpc
