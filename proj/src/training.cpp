#include "nfmpc/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

namespace nfmpc {

nlohmann::json TrainConfig::to_json() const {
  return nlohmann::json{
      {"episodes", episodes},
      {"episode_length", episode_length},
      {"pretrain_episodes", pretrain_episodes},
      {"learning_rate", learning_rate},
      {"grad_clip", grad_clip},
      {"seed", seed},
      {"validation_cadence", validation_cadence},
      {"validation_envs", validation_envs},
      {"validation_samples", validation_samples},
      {"horizon", controller.horizon},
      {"samples", controller.samples},
      {"temperature", controller.temperature},
      {"step_size", controller.step_size},
      {"latent_cov", controller.latent_cov},
      {"conditional", controller.conditional},
      {"condition_on_state", controller.condition_on_state},
      {"include_obstacles", controller.include_obstacles},
      {"flow_blocks", flow_blocks},
      {"flow_hidden", flow_hidden},
      {"flow_hidden_layers", flow_hidden_layers},
      {"shift_hidden", shift_hidden},
      {"shift_variant", shift_variant},
      {"shift_init", shift_init},
      {"warm_start_iters", controller.warm_start_iters},
      {"env_kind", to_string(env_kind)},
      {"env", env.to_json()},
      {"cost_weights",
       {{"goal", costs.goal},
        {"bound", costs.bound},
        {"collision", costs.collision},
        {"control", costs.control},
        {"collision_margin", costs.collision_margin}}}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.episodes = j.value("episodes", cfg.episodes);
  cfg.episode_length = j.value("episode_length", cfg.episode_length);
  cfg.pretrain_episodes = j.value("pretrain_episodes", cfg.pretrain_episodes);
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.grad_clip = j.value("grad_clip", cfg.grad_clip);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.validation_cadence = j.value("validation_cadence", cfg.validation_cadence);
  cfg.validation_envs = j.value("validation_envs", cfg.validation_envs);
  cfg.validation_samples = j.value("validation_samples", cfg.validation_samples);
  cfg.controller.kind = "nfmpc";
  cfg.controller.horizon = j.value("horizon", cfg.controller.horizon);
  cfg.controller.samples = j.value("samples", cfg.controller.samples);
  cfg.controller.temperature = j.value("temperature", cfg.controller.temperature);
  cfg.controller.step_size = j.value("step_size", cfg.controller.step_size);
  cfg.controller.latent_cov = j.value("latent_cov", cfg.controller.latent_cov);
  cfg.controller.conditional = j.value("conditional", cfg.controller.conditional);
  cfg.controller.condition_on_state =
      j.value("condition_on_state", cfg.controller.condition_on_state);
  cfg.controller.include_obstacles =
      j.value("include_obstacles", cfg.controller.include_obstacles);
  cfg.flow_blocks = j.value("flow_blocks", cfg.flow_blocks);
  cfg.flow_hidden = j.value("flow_hidden", cfg.flow_hidden);
  cfg.flow_hidden_layers = j.value("flow_hidden_layers", cfg.flow_hidden_layers);
  cfg.shift_hidden = j.value("shift_hidden", cfg.shift_hidden);
  cfg.shift_variant = j.value("shift_variant", cfg.shift_variant);
  cfg.shift_init = j.value("shift_init", cfg.shift_init);
  cfg.controller.warm_start_iters = j.value("warm_start_iters", cfg.controller.warm_start_iters);
  cfg.env_kind = env_kind_from_string(j.value("env_kind", to_string(cfg.env_kind)));
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

int TrainConfig::context_dim() const {
  if (!controller.conditional) return 0;
  return 6 + (controller.include_obstacles ? 2 * env.obstacle_count : 0);
}

Vec loss_gradient(const SampleBatch& batch, const Bijection& flow, ConstSpan mean,
                  ConstSpan diag_var, ConstSpan context, ParamVector& flow_grad) {
  check_config(!batch.latents.empty() && batch.latents.size() == batch.weights.size(),
               "loss_gradient needs a complete batch");
  Vec mean_grad(mean.size(), 0.0);
  Vec g_z(mean.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double wi = batch.weights[i];
    const Vec& z = batch.latents[i];
    for (std::size_t d = 0; d < mean.size(); ++d) {
      const double r = (z[d] - mean[d]) / diag_var[d];
      g_z[d] = wi * r;         // -w_i * dlogp/dz
      mean_grad[d] -= wi * r;  // -w_i * dlogp/dmu
    }
    flow.pull_vjp(batch.controls[i], context, g_z, -wi, flow_grad);
  }
  return mean_grad;
}

Vec delta_mu_vjp(const SampleBatch& batch, const Bijection& flow, ConstSpan mean_pre,
                 ConstSpan diag_var, ConstSpan context, ConstSpan v, ParamVector& flow_grad) {
  check_config(!batch.latents.empty(), "delta_mu_vjp needs latent samples");
  const std::size_t dim = mean_pre.size();
  Vec delta_mu(dim, 0.0);
  for (std::size_t i = 0; i < batch.size(); ++i)
    axpy(batch.weights[i], batch.latents[i], delta_mu);

  Vec mean_adjoint(dim, 0.0);
  Vec g_z(dim);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double wi = batch.weights[i];
    const Vec& z = batch.latents[i];
    double vdot = 0.0;
    for (std::size_t d = 0; d < dim; ++d) vdot += v[d] * (z[d] - delta_mu[d]);
    const double coeff = wi * vdot;  // score-term weight
    for (std::size_t d = 0; d < dim; ++d) {
      const double r = (z[d] - mean_pre[d]) / diag_var[d];
      g_z[d] = wi * v[d] - coeff * r;
      mean_adjoint[d] += coeff * r;
    }
    flow.pull_vjp(batch.controls[i], context, g_z, coeff, flow_grad);
  }
  return mean_adjoint;
}

std::vector<ParamVector> approx_delta_mu_grad(const SampleBatch& batch, const Bijection& flow,
                                              ConstSpan mean_pre, ConstSpan diag_var,
                                              ConstSpan context) {
  std::vector<ParamVector> rows;
  Vec v(mean_pre.size());
  for (std::size_t d = 0; d < mean_pre.size(); ++d) {
    std::fill(v.begin(), v.end(), 0.0);
    v[d] = 1.0;
    ParamVector row = flow.params().zeros_like();
    delta_mu_vjp(batch, flow, mean_pre, diag_var, context, v, row);
    rows.push_back(std::move(row));
  }
  return rows;
}

EpisodeResult run_episode(NfmpcController& controller, const EnvContext& env,
                          const CostWeights& costs, int episode_length,
                          std::uint64_t episode_seed, bool record_tape) {
  EpisodeResult result;
  EnvContext ctx = env;
  Rng noise_rng(episode_seed * 0x2545f4914f6cdd1dull + 1);
  Rng drift_rng(episode_seed * 0x2545f4914f6cdd1dull + 2);

  controller.reset(ctx, ctx.start, episode_seed);
  result.tape.gamma = controller.theta().gamma;
  result.tape.diag_var = controller.theta().diag_var;

  PlanarState x = ctx.start;
  result.trajectory.push_back(x);
  bool arrived = false;
  bool collided = false;

  for (int t = 0; t < episode_length; ++t) {
    if (ctx.dynamic && t > 0) obstacle_drift(ctx, x.px, x.py, /*clearance=*/1.0, drift_rng);

    NfmpcStepRecord rec;
    controller.plan(x, ctx, nullptr, record_tape ? &rec : nullptr);
    const Vec action = controller.act(ctx, x);
    if (record_tape) {
      result.tape.total_loss += rec.loss;
      result.tape.steps.push_back(std::move(rec));
    }
    if (!arrived && !collided)
      result.trajectory_cost += stage_cost(x, action[0], action[1], ctx, costs);

    x = double_integrator_step(x, action[0], action[1], kPlanarDt, kPlanarNoiseSigma, &noise_rng);
    if (!std::isfinite(x.px) || !std::isfinite(x.py) || !std::isfinite(x.vx) ||
        !std::isfinite(x.vy))
      throw NumericError("environment step produced a non-finite state at t=" +
                         std::to_string(t));
    result.trajectory.push_back(x);

    if (!arrived && !collided) {
      if (sdf_query(ctx, x.px, x.py) < 0.0)
        collided = true;
      else if (std::hypot(x.px - ctx.goal_x, x.py - ctx.goal_y) <= kGoalTolerance)
        arrived = true;
    }
    controller.shift();
  }

  result.outcome =
      collided ? Outcome::kCollision : (arrived ? Outcome::kSuccess : Outcome::kTimeout);
  return result;
}

EpisodeGradients backward_episode(const EpisodeTape& tape, const Bijection& flow,
                                  const ShiftModel* shift) {
  EpisodeGradients grads{flow.params().zeros_like(),
                         shift ? shift->params().zeros_like() : ParamVector{}};
  if (tape.steps.empty()) return grads;

  const std::size_t dim = tape.steps.front().mean_after.size();
  const double gamma = tape.gamma;
  const Vec& var = tape.diag_var;
  check_dim(var.size() == dim, "tape latent variance missing or mis-sized");

  Vec a_mu(dim, 0.0);  // adjoint on the post-update mean of step t
  LstmState g_state;
  if (shift && shift->recurrent()) g_state = LstmState::zeros(shift->hidden());

  Vec g_z(dim), delta_mu(dim), b_mu(dim);
  for (std::size_t t = tape.steps.size(); t-- > 0;) {
    const NfmpcStepRecord& rec = tape.steps[t];
    const SampleBatch& batch = rec.batch;
    const Vec& mu_post = rec.mean_after;
    const Vec& mu_pre = rec.mean_before;

    // per-step loss: d/dmu of -sum_i w_i log pi(u_i) at theta_t
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const double wi = batch.weights[i];
      const Vec& z = batch.latents[i];
      for (std::size_t d = 0; d < dim; ++d) a_mu[d] -= wi * (z[d] - mu_post[d]) / var[d];
    }
    const Vec& v = a_mu;

    std::fill(delta_mu.begin(), delta_mu.end(), 0.0);
    for (std::size_t i = 0; i < batch.size(); ++i)
      axpy(batch.weights[i], batch.latents[i], delta_mu);

    // fused per-sample backward: the loss score (at theta_t), the update's
    // M1 - M2 M3 terms (scores at theta~_t) and the pull-output path share
    // one VJP through the flow
    for (std::size_t d = 0; d < dim; ++d) b_mu[d] = (1.0 - gamma) * v[d];
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const double wi = batch.weights[i];
      const Vec& z = batch.latents[i];
      double vdot = 0.0;
      for (std::size_t d = 0; d < dim; ++d) vdot += v[d] * (z[d] - delta_mu[d]);
      const double coeff_loss = -wi;
      const double coeff_upd = gamma * wi * vdot;
      for (std::size_t d = 0; d < dim; ++d) {
        const double r_post = (z[d] - mu_post[d]) / var[d];
        const double r_pre = (z[d] - mu_pre[d]) / var[d];
        g_z[d] = gamma * wi * v[d] - coeff_loss * r_post - coeff_upd * r_pre;
        b_mu[d] += coeff_upd * r_pre;
      }
      flow.pull_vjp(batch.controls[i], rec.context, g_z, coeff_loss + coeff_upd,
                    grads.flow_grad);
    }
    if (!all_finite(b_mu))
      throw NumericError("backward_episode: non-finite gradient at step " + std::to_string(t));

    if (t == 0) break;  // mu~_0 is the episode's constant initialization
    if (shift) {
      ShiftModel::Backward sb =
          shift->backward(tape.steps[t - 1].mean_after, tape.steps[t - 1].shift_state_in, b_mu,
                          g_state, grads.shift_grad);
      a_mu = std::move(sb.mean_grad);
      g_state = std::move(sb.state_grad);
    } else {
      a_mu = b_mu;  // identity shift
    }
  }
  return grads;
}

namespace {

constexpr std::uint64_t kValidationSeedBase = 9000000;

struct ValidationScore {
  double success_rate = 0.0;
  double median_cost = std::numeric_limits<double>::infinity();

  bool better_than(const ValidationScore& other) const {
    if (success_rate != other.success_rate) return success_rate > other.success_rate;
    return median_cost < other.median_cost;
  }
};

double median_of(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::infinity();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

ValidationScore validate(const TrainConfig& cfg, const Bijection& flow, ShiftModel* shift) {
  ControllerConfig ctrl = cfg.controller;
  if (cfg.validation_samples > 0) ctrl.samples = cfg.validation_samples;
  NfmpcController controller(ctrl, flow, shift, default_cost_fn(cfg.costs));
  int successes = 0;
  std::vector<double> costs;
  for (int k = 0; k < cfg.validation_envs; ++k) {
    const std::uint64_t env_seed = kValidationSeedBase + static_cast<std::uint64_t>(k);
    EnvContext env = generate_env(cfg.env_kind, env_seed, cfg.env);
    EpisodeResult res =
        run_episode(controller, env, cfg.costs, cfg.episode_length, env_seed, false);
    if (res.outcome == Outcome::kSuccess) {
      ++successes;
      costs.push_back(res.trajectory_cost);
    }
  }
  ValidationScore score;
  score.success_rate =
      cfg.validation_envs > 0 ? static_cast<double>(successes) / cfg.validation_envs : 0.0;
  score.median_cost = median_of(std::move(costs));
  return score;
}

void clip_gradients(EpisodeGradients& grads, double clip) {
  if (clip <= 0.0) return;
  const double nf = global_norm(grads.flow_grad);
  const double ns = global_norm(grads.shift_grad);
  const double norm = std::sqrt(nf * nf + ns * ns);
  if (norm > clip) {
    const double scale = clip / norm;
    scale_values(grads.flow_grad, scale);
    scale_values(grads.shift_grad, scale);
  }
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  FlowConfig flow_cfg;
  flow_cfg.control_dim = cfg.controller.control_dim;
  flow_cfg.horizon = cfg.controller.horizon;
  flow_cfg.context_dim = cfg.context_dim();
  flow_cfg.num_blocks = cfg.flow_blocks;
  flow_cfg.hidden_width = cfg.flow_hidden;
  flow_cfg.hidden_layers = cfg.flow_hidden_layers;
  flow_cfg.sigmoid_layer = true;
  flow_cfg.lower = Vec(cfg.controller.control_dim, -kControlLimit);
  flow_cfg.upper = Vec(cfg.controller.control_dim, kControlLimit);
  flow_cfg.init_seed = cfg.seed;
  FlowModel flow(flow_cfg);

  const ShiftVariant variant = shift_variant_from_string(cfg.shift_variant);
  std::optional<ShiftModel> shift;
  if (variant != ShiftVariant::kIdentity)
    shift.emplace(variant, flow_cfg.dim(), cfg.controller.control_dim, cfg.shift_hidden,
                  cfg.seed + 1, shift_init_from_string(cfg.shift_init));
  ShiftModel* shift_ptr = shift ? &*shift : nullptr;

  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.learning_rate;
  AdamState flow_opt = AdamState::zeros_like(flow.params());
  AdamState shift_opt =
      shift && shift->trainable() ? AdamState::zeros_like(shift->params()) : AdamState{};

  TrainResult result;
  result.flow_checkpoint = (fs::path(out_dir) / "flow_best.ckpt").string();
  result.shift_checkpoint = (fs::path(out_dir) / "shift_best.ckpt").string();
  result.learning_curve_path = (fs::path(out_dir) / "learning_curve.csv").string();

  std::ofstream curve(result.learning_curve_path);
  if (!curve) throw ConfigError("cannot write learning curve: " + result.learning_curve_path);
  curve << "episode,train_loss,val_success_rate,val_median_cost,wall_clock_s\n";
  curve.precision(17);

  const auto t_start = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  };
  auto save_best = [&] {
    flow.save(result.flow_checkpoint);
    if (shift) shift->save(result.shift_checkpoint);
  };

  // FlowMPPI-style initialization: gradient steps on the initial distribution
  // of the flow, no episode rollout, latent Gaussian fixed at zero mean.
  if (cfg.pretrain_episodes > 0) {
    const Vec zero_mean(flow_cfg.dim(), 0.0);
    const Vec latent_var(flow_cfg.dim(), cfg.controller.latent_cov);
    Vec sigma(flow_cfg.dim(), std::sqrt(cfg.controller.latent_cov));
    HaltonSampler sampler(flow_cfg.dim());
    for (int d = 0; d < cfg.pretrain_episodes; ++d) {
      const std::uint64_t env_seed =
          2000000000ull + cfg.seed * 10000000ull + static_cast<std::uint64_t>(d);
      EnvContext env = generate_env(cfg.env_kind, env_seed, cfg.env);
      const Vec c = cfg.controller.conditional
                        ? make_context_vector(env, env.start, cfg.controller.condition_on_state,
                                              cfg.controller.include_obstacles)
                        : Vec{};
      auto rows = sampler.draw(static_cast<std::size_t>(cfg.controller.samples));
      SampleBatch batch;
      batch.latents = gaussian_from_halton(rows, zero_mean, sigma, false);
      batch.controls.resize(batch.latents.size());
      batch.costs.resize(batch.latents.size());
      for (std::size_t i = 0; i < batch.latents.size(); ++i) {
        batch.controls[i] = flow.push(batch.latents[i], c).output;
        batch.costs[i] = rollout_cost(env.start, batch.controls[i], env, cfg.costs);
      }
      batch.weights =
          softmax_weights(batch.costs, cfg.controller.temperature, cfg.controller.cost_normalization);
      EpisodeGradients grads{flow.params().zeros_like(), {}};
      loss_gradient(batch, flow, zero_mean, latent_var, c, grads.flow_grad);
      clip_gradients(grads, cfg.grad_clip);
      adam_step(flow.params(), grads.flow_grad, flow_opt, adam_cfg);
    }
  }

  ValidationScore best;
  bool have_best = false;
  ValidationScore last_val;
  bool validated = false;
  auto run_validation = [&](int episode) {
    last_val = validate(cfg, flow, shift_ptr);
    validated = true;
    if (!have_best || last_val.better_than(best)) {
      best = last_val;
      have_best = true;
      save_best();
      result.best_val_success = best.success_rate;
      result.best_val_median_cost = best.median_cost;
    }
    (void)episode;
  };

  NfmpcController controller(cfg.controller, flow, shift_ptr, default_cost_fn(cfg.costs));
  const bool do_validation = cfg.validation_cadence > 0 && cfg.validation_envs > 0;
  if (do_validation && cfg.episodes > 0) run_validation(0);

  for (int d = 0; d < cfg.episodes; ++d) {
    const std::uint64_t env_seed =
        1000000000ull + cfg.seed * 10000000ull + static_cast<std::uint64_t>(d);
    EnvContext env = generate_env(cfg.env_kind, env_seed, cfg.env);
    double train_loss = std::numeric_limits<double>::quiet_NaN();
    try {
      EpisodeResult episode =
          run_episode(controller, env, cfg.costs, cfg.episode_length, env_seed, true);
      train_loss = episode.tape.total_loss;
      if (!std::isfinite(train_loss)) throw NumericError("non-finite episode loss");
      EpisodeGradients grads = backward_episode(episode.tape, flow, shift_ptr);
      clip_gradients(grads, cfg.grad_clip);
      adam_step(flow.params(), grads.flow_grad, flow_opt, adam_cfg);
      if (shift && shift->trainable())
        adam_step(shift->params(), grads.shift_grad, shift_opt, adam_cfg);
    } catch (const NumericError&) {
      result.diverged = true;
      curve << (d + 1) << ',' << train_loss << ','
            << (validated ? last_val.success_rate : -1.0) << ','
            << (validated ? last_val.median_cost : -1.0) << ',' << elapsed() << '\n';
      break;
    }
    result.episodes_run = d + 1;
    if (do_validation && (d + 1) % cfg.validation_cadence == 0) run_validation(d + 1);
    curve << (d + 1) << ',' << train_loss << ',' << (validated ? last_val.success_rate : -1.0)
          << ',' << (validated ? last_val.median_cost : -1.0) << ',' << elapsed() << '\n';
  }
  if (do_validation && !result.diverged && cfg.episodes > 0 &&
      cfg.episodes % cfg.validation_cadence != 0)
    run_validation(cfg.episodes);

  const std::string flow_final = (fs::path(out_dir) / "flow_final.ckpt").string();
  const std::string shift_final = (fs::path(out_dir) / "shift_final.ckpt").string();
  flow.save(flow_final);
  if (shift) shift->save(shift_final);
  if (!have_best) {
    // no validation ran: the final parameters are the deliverable
    result.flow_checkpoint = flow_final;
    result.shift_checkpoint = shift ? shift_final : "";
  } else if (!shift) {
    result.shift_checkpoint = "";
  }
  return result;
}

}  // namespace nfmpc
