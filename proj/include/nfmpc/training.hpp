#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "nfmpc/adam.hpp"
#include "nfmpc/controller.hpp"
#include "nfmpc/envs.hpp"
#include "nfmpc/flow.hpp"

namespace nfmpc {

/// Per-timestep forward records supporting the backward pass through the
/// latent MPPI update and the shift model. gamma and the (fixed) latent
/// variance are episode constants.
struct EpisodeTape {
  std::vector<NfmpcStepRecord> steps;
  double total_loss = 0.0;
  double gamma = 1.0;
  Vec diag_var;
};

struct TrainConfig {
  int episodes = 500;          // D
  int episode_length = 100;    // T
  int pretrain_episodes = 0;   // FlowMPPI-style initialization phase
  double learning_rate = 1e-4;
  double grad_clip = 10.0;
  std::uint64_t seed = 0;
  int validation_cadence = 100;  // 0 disables validation
  int validation_envs = 10;
  int validation_samples = 0;  // 0: same as controller.samples

  ControllerConfig controller;  // H, N, beta, gamma, latent covariance, conditioning
  int flow_blocks = 5;
  int flow_hidden = 128;
  int flow_hidden_layers = 1;
  int shift_hidden = 128;
  std::string shift_variant = "learned-lstm";
  std::string shift_init = "zero";

  EnvKind env_kind = EnvKind::kRandom;
  EnvGenParams env;
  CostWeights costs;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);

  int context_dim() const;
};

/// Monte-Carlo gradient of the per-step exponential-utility loss with the
/// forward-pass weights: accumulates -sum_i w_i d/d(lambda) log pi(u_i | c)
/// into flow_grad and returns the matching gradient with respect to the
/// Gaussian mean (for composing the update / shift chain).
Vec loss_gradient(const SampleBatch& batch, const Bijection& flow, ConstSpan mean,
                  ConstSpan diag_var, ConstSpan context, ParamVector& flow_grad);

/// v^T (M1 - M2 M3), the approximate gradient of the latent MPPI update
/// Delta_mu through the flow parameters. The direct part accumulates into
/// flow_grad; the returned vector is the adjoint on the pre-update mean
/// (the score chain through theta~).
Vec delta_mu_vjp(const SampleBatch& batch, const Bijection& flow, ConstSpan mean_pre,
                 ConstSpan diag_var, ConstSpan context, ConstSpan v, ParamVector& flow_grad);

/// Dense form of the same gradient (one row per latent dimension), for
/// low-dimensional checks. The pre-update mean is held fixed.
std::vector<ParamVector> approx_delta_mu_grad(const SampleBatch& batch, const Bijection& flow,
                                              ConstSpan mean_pre, ConstSpan diag_var,
                                              ConstSpan context);

struct EpisodeResult {
  EpisodeTape tape;
  std::vector<PlanarState> trajectory;
  Outcome outcome = Outcome::kTimeout;
  double trajectory_cost = 0.0;  // true stage costs up to goal arrival (or the full episode)
};

/// Runs one episode of Algorithm-style interaction: sample batch, latent
/// MPPI update, act on the true system, learned shift; optionally records the
/// tape for the backward pass.
EpisodeResult run_episode(NfmpcController& controller, const EnvContext& env,
                          const CostWeights& costs, int episode_length,
                          std::uint64_t episode_seed, bool record_tape);

struct EpisodeGradients {
  ParamVector flow_grad;
  ParamVector shift_grad;
};

/// Reverse-time accumulation through the tape: per-step loss gradients plus
/// the approximate MPPI-update backward, composed through (1-gamma) and the
/// shift network (including its recurrent state for the LSTM variant).
EpisodeGradients backward_episode(const EpisodeTape& tape, const Bijection& flow,
                                  const ShiftModel* shift);

struct TrainResult {
  int episodes_run = 0;
  double best_val_success = -1.0;
  double best_val_median_cost = 0.0;
  bool diverged = false;
  std::string flow_checkpoint;       // best-on-validation (final when no validation ran)
  std::string shift_checkpoint;
  std::string learning_curve_path;
};

/// Full bi-level training: optional FlowMPPI-style pretraining, per-episode
/// BPTT + Adam on the flow and shift parameters, periodic validation with
/// best-checkpoint retention, learning-curve CSV.
TrainResult train(const TrainConfig& cfg, const std::string& out_dir);

}  // namespace nfmpc
