#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "nfmpc/common.hpp"
#include "nfmpc/envs.hpp"
#include "nfmpc/flow.hpp"
#include "nfmpc/sampling.hpp"

namespace nfmpc {

/// Online policy parameters: the latent mean updated by MPPI, a fixed
/// diagonal latent covariance, temperature and step size.
struct LatentGaussian {
  Vec mean;
  Vec diag_var;
  double beta = 1e-32;
  double gamma = 1.0;
};

struct SampleBatch {
  std::vector<Vec> latents;  // empty for control-space controllers
  std::vector<Vec> controls;
  Vec costs;
  Vec weights;

  std::size_t size() const { return controls.size(); }
};

/// Min-max normalizes costs to [0, 1] (when they are not all equal), then
/// w_i proportional to exp(-c_i / beta). Weights sum to one; a degenerate
/// batch gets uniform weights.
Vec softmax_weights(ConstSpan costs, double beta, bool normalize_costs = true);

Vec weighted_mean_update(ConstSpan prev_mean, const std::vector<Vec>& samples, ConstSpan weights,
                         double gamma);

/// mu = (1-gamma) mu~ + gamma sum_i w_i u_i
Vec mppi_control_update(ConstSpan prev_mean, const SampleBatch& batch, double gamma);

/// Same update with the latent samples in place of the controls.
Vec mppi_latent_update(ConstSpan prev_mean, const SampleBatch& batch, double gamma);

/// Full-covariance adaptation for the control-space baseline. gamma_cov = 0
/// leaves the matrix untouched; otherwise the blended weighted scatter is
/// regularized with eps * I.
Eigen::MatrixXd covariance_adapt(const Eigen::MatrixXd& prev, const SampleBatch& batch,
                                 ConstSpan mean, double gamma_cov, double eps = 1e-8);

/// Drop the first control of the time-major (H, M) sequence, append zeros.
Vec shift_standard(ConstSpan mean, int control_dim);

enum class ShiftVariant { kStandard, kIdentity, kLearnedMlp, kLearnedLstm };
ShiftVariant shift_variant_from_string(const std::string& s);
std::string to_string(ShiftVariant v);

/// Initialization of the learned shift networks: zero output, or (MLP only,
/// hidden = 2 * dim) an exact reproduction of the standard time-advance shift
/// via paired rectifiers, trainable from there.
enum class ShiftInit { kZeroOutput, kStandardShift };
ShiftInit shift_init_from_string(const std::string& s);

struct ShiftEval {
  Vec mean;
  LstmState state;
};

/// Warm-start operator mapping the solved mean to the next step's
/// initialization. Learned variants are an MLP or an LSTM over the latent
/// mean; the LSTM threads its state across the episode.
class ShiftModel {
 public:
  ShiftModel(ShiftVariant variant, int dim, int control_dim, int hidden, std::uint64_t init_seed,
             ShiftInit init = ShiftInit::kZeroOutput);

  ShiftVariant variant() const { return variant_; }
  bool trainable() const {
    return variant_ == ShiftVariant::kLearnedMlp || variant_ == ShiftVariant::kLearnedLstm;
  }
  bool recurrent() const { return variant_ == ShiftVariant::kLearnedLstm; }
  int dim() const { return dim_; }
  int hidden() const { return hidden_; }
  const ParamVector& params() const { return params_; }
  ParamVector& params() { return params_; }

  LstmState initial_state() const;
  ShiftEval apply(ConstSpan mean, const LstmState& state) const;

  struct Backward {
    Vec mean_grad;
    LstmState state_grad;
  };
  /// Gradients of (g_mean . out_mean + g_state . out_state) w.r.t. the input
  /// mean, input state and parameters (accumulated into grad).
  Backward backward(ConstSpan mean, const LstmState& state, ConstSpan g_mean,
                    const LstmState& g_state, ParamVector& grad) const;

  void save(const std::string& path) const;
  static ShiftModel load(const std::string& path);

 private:
  ShiftVariant variant_;
  int dim_;
  int control_dim_;
  int hidden_;
  NetworkSpec mlp_spec_;
  LstmSpec lstm_spec_;
  NetworkSpec lstm_out_spec_;
  ParamVector params_;
};

struct StepTiming {
  double sample_s = 0.0;
  double rollout_s = 0.0;
  double update_s = 0.0;
  double flow_s = 0.0;

  double total() const { return sample_s + rollout_s + update_s + flow_s; }
};

struct StepResult {
  Vec action;  // M entries
  StepTiming timing;
};

struct ControllerConfig {
  std::string kind = "mppi";  // mppi | flowmppi | nfmpc
  int control_dim = 2;
  int horizon = 32;
  int samples = 64;
  double temperature = 1e-32;
  double step_size = 1.0;
  double init_cov = 10.0;     // control-space sigma^2
  double latent_cov = 1.0;
  double gamma_cov = 0.7;
  bool adapt_covariance = true;
  double flow_penalty = 1e-4;
  int spline_degree = 0;  // 0 disables B-spline smoothing
  int spline_points = 0;
  std::string shift = "";  // default: standard for mppi/flowmppi, learned-lstm for nfmpc
  bool deterministic_action = true;
  int warm_start_iters = 0;
  bool cost_normalization = true;
  bool conditional = true;
  bool condition_on_state = true;
  bool include_obstacles = true;

  int dim() const { return control_dim * horizon; }
};

/// Cost of a candidate control sequence from the given state; swap in a toy
/// cost for tests. The default rolls out the noiseless prediction model.
using CostEvalFn =
    std::function<double(const PlanarState& state, ConstSpan controls, const EnvContext& ctx)>;

CostEvalFn default_cost_fn(const CostWeights& weights);

class Controller {
 public:
  virtual ~Controller() = default;
  virtual void reset(const EnvContext& ctx, const PlanarState& x0, std::uint64_t seed) = 0;
  virtual StepResult step(const PlanarState& x, const EnvContext& ctx) = 0;
  virtual const std::string& kind() const = 0;
};

/// Deterministic mode pushes the mean through the flow and takes the first
/// control; stochastic mode pushes one sampled latent sequence.
Vec select_action(const Bijection& flow, ConstSpan mean, ConstSpan diag_var, ConstSpan context,
                  int control_dim, bool deterministic, Rng* rng);

struct NfmpcStepRecord {
  Vec mean_before;  // pre-update latent mean
  Vec mean_after;
  SampleBatch batch;
  Vec context;
  LstmState shift_state_in;  // recurrent state consumed by the shift after this step
  double loss = 0.0;         // softmin cost statistic of the batch
};

/// NFMPC: quasi-random latent sampling, rollout scoring, latent-space MPPI
/// update and a (learned) latent shift between steps. With the identity flow
/// and identity shift this reduces exactly to Gaussian MPPI with a fixed
/// covariance.
class NfmpcController : public Controller {
 public:
  NfmpcController(const ControllerConfig& cfg, const Bijection& flow, ShiftModel* shift,
                  CostEvalFn cost_fn);

  void reset(const EnvContext& ctx, const PlanarState& x0, std::uint64_t seed) override;
  StepResult step(const PlanarState& x, const EnvContext& ctx) override;
  const std::string& kind() const override { return kind_; }

  /// Sample / weight / update cycle without acting or shifting; exposed for
  /// the training loop and warm starting.
  void plan(const PlanarState& x, const EnvContext& ctx, StepTiming* timing,
            NfmpcStepRecord* record);
  /// Action for the current (post-update) solution.
  Vec act(const EnvContext& ctx, const PlanarState& x);
  /// Applies the shift model to the current solution.
  void shift();

  Vec context_vector(const EnvContext& ctx, const PlanarState& x) const;
  const Bijection& flow() const { return flow_; }
  const ControllerConfig& config() const { return cfg_; }
  const LatentGaussian& theta() const { return theta_; }
  LatentGaussian& theta() { return theta_; }
  const LstmState& shift_state() const { return shift_state_; }
  void warm_start(const PlanarState& x0, const EnvContext& ctx, int iterations);

 private:
  std::string kind_ = "nfmpc";
  ControllerConfig cfg_;
  const Bijection& flow_;
  ShiftModel* shift_model_;  // may be null (identity)
  CostEvalFn cost_fn_;
  LatentGaussian theta_;
  LstmState shift_state_;
  HaltonSampler sampler_;
  Rng action_rng_{0};
};

/// Gaussian MPPI baseline: full-covariance control-space sampling with Halton
/// draws, optional B-spline smoothing, covariance adaptation, standard shift.
class MppiController : public Controller {
 public:
  MppiController(const ControllerConfig& cfg, CostEvalFn cost_fn);

  void reset(const EnvContext& ctx, const PlanarState& x0, std::uint64_t seed) override;
  StepResult step(const PlanarState& x, const EnvContext& ctx) override;
  const std::string& kind() const override { return kind_; }

  void plan(const PlanarState& x, const EnvContext& ctx, StepTiming* timing);
  ConstSpan mean() const { return mean_; }
  const Eigen::MatrixXd& covariance() const { return cov_; }
  void warm_start(const PlanarState& x0, const EnvContext& ctx, int iterations);

 private:
  std::string kind_ = "mppi";
  ControllerConfig cfg_;
  CostEvalFn cost_fn_;
  Vec mean_;
  Eigen::MatrixXd cov_;
  HaltonSampler sampler_;
  Rng action_rng_{0};
};

/// FlowMPPI baseline: half the samples pushed from a fixed latent Gaussian,
/// half Gaussian perturbations of the control-space mean; flow-sample costs
/// carry a latent deviation penalty; all updates happen in control space.
class FlowMppiController : public Controller {
 public:
  FlowMppiController(const ControllerConfig& cfg, const Bijection& flow, CostEvalFn cost_fn);

  void reset(const EnvContext& ctx, const PlanarState& x0, std::uint64_t seed) override;
  StepResult step(const PlanarState& x, const EnvContext& ctx) override;
  const std::string& kind() const override { return kind_; }

  void plan(const PlanarState& x, const EnvContext& ctx, StepTiming* timing,
            SampleBatch* batch_out = nullptr);
  ConstSpan mean() const { return mean_; }
  Vec context_vector(const EnvContext& ctx, const PlanarState& x) const;

 private:
  std::string kind_ = "flowmppi";
  ControllerConfig cfg_;
  const Bijection& flow_;
  CostEvalFn cost_fn_;
  Vec mean_;
  Eigen::MatrixXd cov_;
  HaltonSampler sampler_;
  Rng action_rng_{0};
};

std::unique_ptr<Controller> make_controller(const ControllerConfig& cfg, const Bijection* flow,
                                            ShiftModel* shift, const CostWeights& weights);

}  // namespace nfmpc
