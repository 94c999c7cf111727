#include "nfmpc/controller.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace nfmpc {

namespace {

class PhaseTimer {
 public:
  double lap() {
    const auto now = Clock::now();
    const double dt = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    return dt;
  }

 private:
  using Clock = std::chrono::steady_clock;
  Clock::time_point last_ = Clock::now();
};

double softmin_cost(ConstSpan costs, double beta) {
  const double m = *std::min_element(costs.begin(), costs.end());
  double acc = 0.0;
  for (double c : costs) acc += std::exp(-(c - m) / beta);
  return m - beta * std::log(acc / static_cast<double>(costs.size()));
}

}  // namespace

Vec softmax_weights(ConstSpan costs, double beta, bool normalize_costs) {
  if (costs.empty()) throw std::invalid_argument("softmax_weights: empty cost array");
  check_config(beta > 0.0, "temperature must be positive");
  if (!all_finite(costs)) throw NumericError("softmax_weights: non-finite cost");

  const auto [lo_it, hi_it] = std::minmax_element(costs.begin(), costs.end());
  const double lo = *lo_it, hi = *hi_it;
  const std::size_t n = costs.size();
  if (hi <= lo) return Vec(n, 1.0 / static_cast<double>(n));

  Vec w(n);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double c = normalize_costs ? (costs[i] - lo) / (hi - lo) : costs[i] - lo;
    w[i] = std::exp(-c / beta);
    sum += w[i];
  }
  for (double& x : w) x /= sum;
  return w;
}

Vec weighted_mean_update(ConstSpan prev_mean, const std::vector<Vec>& samples, ConstSpan weights,
                         double gamma) {
  check_dim(samples.size() == weights.size(), "sample / weight count mismatch");
  Vec mean(prev_mean.size(), 0.0);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    check_dim(samples[i].size() == prev_mean.size(), "sample dimension mismatch");
    axpy(weights[i], samples[i], mean);
  }
  for (std::size_t d = 0; d < mean.size(); ++d)
    mean[d] = (1.0 - gamma) * prev_mean[d] + gamma * mean[d];
  return mean;
}

Vec mppi_control_update(ConstSpan prev_mean, const SampleBatch& batch, double gamma) {
  return weighted_mean_update(prev_mean, batch.controls, batch.weights, gamma);
}

Vec mppi_latent_update(ConstSpan prev_mean, const SampleBatch& batch, double gamma) {
  check_config(!batch.latents.empty(), "latent update needs latent samples");
  return weighted_mean_update(prev_mean, batch.latents, batch.weights, gamma);
}

Eigen::MatrixXd covariance_adapt(const Eigen::MatrixXd& prev, const SampleBatch& batch,
                                 ConstSpan mean, double gamma_cov, double eps) {
  check_config(gamma_cov >= 0.0 && gamma_cov <= 1.0, "gamma_cov must lie in [0, 1]");
  if (gamma_cov == 0.0) return prev;
  const auto d = static_cast<Eigen::Index>(mean.size());
  Eigen::MatrixXd scatter = Eigen::MatrixXd::Zero(d, d);
  Eigen::VectorXd diff(d);
  for (std::size_t i = 0; i < batch.controls.size(); ++i) {
    for (Eigen::Index k = 0; k < d; ++k) diff(k) = batch.controls[i][k] - mean[k];
    scatter.noalias() += batch.weights[i] * diff * diff.transpose();
  }
  return (1.0 - gamma_cov) * prev + gamma_cov * scatter +
         eps * Eigen::MatrixXd::Identity(d, d);
}

Vec shift_standard(ConstSpan mean, int control_dim) {
  check_dim(control_dim > 0 && mean.size() % control_dim == 0,
            "mean length must be a multiple of the control dimension");
  Vec out(mean.size(), 0.0);
  std::copy(mean.begin() + control_dim, mean.end(), out.begin());
  return out;
}

ShiftVariant shift_variant_from_string(const std::string& s) {
  if (s == "standard") return ShiftVariant::kStandard;
  if (s == "identity") return ShiftVariant::kIdentity;
  if (s == "learned-mlp") return ShiftVariant::kLearnedMlp;
  if (s == "learned-lstm") return ShiftVariant::kLearnedLstm;
  throw ConfigError("unknown shift variant '" + s + "'");
}

std::string to_string(ShiftVariant v) {
  switch (v) {
    case ShiftVariant::kStandard: return "standard";
    case ShiftVariant::kIdentity: return "identity";
    case ShiftVariant::kLearnedMlp: return "learned-mlp";
    case ShiftVariant::kLearnedLstm: return "learned-lstm";
  }
  return "identity";
}

ShiftInit shift_init_from_string(const std::string& s) {
  if (s == "zero") return ShiftInit::kZeroOutput;
  if (s == "standard") return ShiftInit::kStandardShift;
  throw ConfigError("unknown shift init '" + s + "'");
}

ShiftModel::ShiftModel(ShiftVariant variant, int dim, int control_dim, int hidden,
                       std::uint64_t init_seed, ShiftInit init)
    : variant_(variant), dim_(dim), control_dim_(control_dim), hidden_(hidden) {
  check_config(dim >= 1, "shift model width must be positive");
  Rng rng(init_seed);
  if (variant_ == ShiftVariant::kLearnedMlp) {
    mlp_spec_ = NetworkSpec::mlp_uniform(dim, {hidden}, dim, Activation::kRelu, false);
    mlp_init(params_, "shift", mlp_spec_, rng);
    if (init == ShiftInit::kStandardShift) {
      // out = relu(S mu) - relu(-S mu) = S mu, with S the time-advance map
      check_config(hidden == 2 * dim, "standard-shift init needs hidden = 2 * dim");
      Span w1 = params_.seg("shift/l0/W");
      Span b1 = params_.seg("shift/l0/b");
      Span w2 = params_.seg("shift/l1/W");
      Span b2 = params_.seg("shift/l1/b");
      std::fill(w1.begin(), w1.end(), 0.0);
      std::fill(b1.begin(), b1.end(), 0.0);
      std::fill(w2.begin(), w2.end(), 0.0);
      std::fill(b2.begin(), b2.end(), 0.0);
      for (int i = 0; i + control_dim < dim; ++i) {
        w1[static_cast<std::size_t>(i) * dim + (i + control_dim)] = 1.0;
        w1[static_cast<std::size_t>(dim + i) * dim + (i + control_dim)] = -1.0;
      }
      for (int i = 0; i < dim; ++i) {
        w2[static_cast<std::size_t>(i) * hidden + i] = 1.0;
        w2[static_cast<std::size_t>(i) * hidden + (dim + i)] = -1.0;
      }
    }
  } else if (variant_ == ShiftVariant::kLearnedLstm) {
    check_config(init == ShiftInit::kZeroOutput,
                 "standard-shift init is only available for the MLP variant");
    lstm_spec_ = LstmSpec{dim, hidden};
    lstm_init(params_, "shift/lstm", lstm_spec_, rng);
    lstm_out_spec_ = NetworkSpec::mlp_uniform(hidden, {}, dim, Activation::kIdentity, false);
    mlp_init(params_, "shift/out", lstm_out_spec_, rng);
  }
}

LstmState ShiftModel::initial_state() const {
  return recurrent() ? LstmState::zeros(hidden_) : LstmState{};
}

ShiftEval ShiftModel::apply(ConstSpan mean, const LstmState& state) const {
  check_dim(static_cast<int>(mean.size()) == dim_, "shift model width mismatch");
  switch (variant_) {
    case ShiftVariant::kStandard:
      return {shift_standard(mean, control_dim_), {}};
    case ShiftVariant::kIdentity:
      return {Vec(mean.begin(), mean.end()), {}};
    case ShiftVariant::kLearnedMlp:
      return {mlp_apply(params_, "shift", mlp_spec_, mean), {}};
    case ShiftVariant::kLearnedLstm: {
      LstmState next = lstm_step(params_, "shift/lstm", lstm_spec_, state, mean);
      return {mlp_apply(params_, "shift/out", lstm_out_spec_, next.h), std::move(next)};
    }
  }
  return {Vec(mean.begin(), mean.end()), {}};
}

ShiftModel::Backward ShiftModel::backward(ConstSpan mean, const LstmState& state,
                                          ConstSpan g_mean, const LstmState& g_state,
                                          ParamVector& grad) const {
  switch (variant_) {
    case ShiftVariant::kStandard: {
      Vec g(dim_, 0.0);
      for (int i = control_dim_; i < dim_; ++i) g[i] = g_mean[i - control_dim_];
      return {std::move(g), {}};
    }
    case ShiftVariant::kIdentity:
      return {Vec(g_mean.begin(), g_mean.end()), {}};
    case ShiftVariant::kLearnedMlp:
      return {mlp_backward(params_, "shift", mlp_spec_, mean, g_mean, grad), {}};
    case ShiftVariant::kLearnedLstm: {
      LstmState next = lstm_step(params_, "shift/lstm", lstm_spec_, state, mean);
      Vec gh = mlp_backward(params_, "shift/out", lstm_out_spec_, next.h, g_mean, grad);
      if (!g_state.h.empty()) axpy(1.0, g_state.h, gh);
      Vec gc = g_state.c.empty() ? Vec(hidden_, 0.0) : g_state.c;
      LstmBackwardResult res =
          lstm_backward(params_, "shift/lstm", lstm_spec_, state, mean, gh, gc, grad);
      return {std::move(res.input_grad), std::move(res.state_grad)};
    }
  }
  return {Vec(g_mean.begin(), g_mean.end()), {}};
}

void ShiftModel::save(const std::string& path) const {
  nlohmann::json meta{{"variant", to_string(variant_)},
                      {"dim", dim_},
                      {"control_dim", control_dim_},
                      {"hidden", hidden_}};
  save_checkpoint(params_, meta, path);
}

ShiftModel ShiftModel::load(const std::string& path) {
  nlohmann::json meta;
  ParamVector params = load_checkpoint(path, &meta);
  ShiftModel model(shift_variant_from_string(meta.at("variant").get<std::string>()),
                   meta.at("dim").get<int>(), meta.at("control_dim").get<int>(),
                   meta.at("hidden").get<int>(), 0);
  check_config(model.params_.same_layout(params), "shift checkpoint layout mismatch: " + path);
  std::copy(params.values().begin(), params.values().end(), model.params_.values().begin());
  return model;
}

CostEvalFn default_cost_fn(const CostWeights& weights) {
  return [weights](const PlanarState& state, ConstSpan controls, const EnvContext& ctx) {
    return rollout_cost(state, controls, ctx, weights);
  };
}

Vec select_action(const Bijection& flow, ConstSpan mean, ConstSpan diag_var, ConstSpan context,
                  int control_dim, bool deterministic, Rng* rng) {
  Vec z(mean.begin(), mean.end());
  if (!deterministic) {
    check_config(rng != nullptr, "stochastic action selection needs an rng");
    for (std::size_t d = 0; d < z.size(); ++d) z[d] += std::sqrt(diag_var[d]) * rng->normal();
  }
  const FlowEval ev = flow.push(z, context);
  Vec action(ev.output.begin(), ev.output.begin() + control_dim);
  for (double& a : action) a = std::clamp(a, -kControlLimit, kControlLimit);
  return action;
}

// ---------------------------------------------------------------------------
// NFMPC

NfmpcController::NfmpcController(const ControllerConfig& cfg, const Bijection& flow,
                                 ShiftModel* shift, CostEvalFn cost_fn)
    : cfg_(cfg), flow_(flow), shift_model_(shift), cost_fn_(std::move(cost_fn)),
      sampler_(cfg.dim()) {
  check_config(cfg_.samples >= 1, "need at least one sample");
  check_dim(flow_.dim() == cfg_.dim(), "flow dimension does not match H*M");
  if (shift_model_)
    check_dim(shift_model_->dim() == cfg_.dim(), "shift model width must equal H*M");
  theta_.mean.assign(cfg_.dim(), 0.0);
  theta_.diag_var.assign(cfg_.dim(), cfg_.latent_cov);
  theta_.beta = cfg_.temperature;
  theta_.gamma = cfg_.step_size;
}

Vec NfmpcController::context_vector(const EnvContext& ctx, const PlanarState& x) const {
  if (!cfg_.conditional) return {};
  Vec c = make_context_vector(ctx, x, cfg_.condition_on_state, cfg_.include_obstacles);
  check_dim(static_cast<int>(c.size()) == flow_.context_dim(),
            "context width does not match the flow");
  return c;
}

void NfmpcController::reset(const EnvContext& ctx, const PlanarState& x0, std::uint64_t seed) {
  theta_.mean.assign(cfg_.dim(), 0.0);
  shift_state_ = shift_model_ ? shift_model_->initial_state() : LstmState{};
  sampler_ = HaltonSampler(cfg_.dim());
  action_rng_ = Rng(seed);
  if (cfg_.warm_start_iters > 0) warm_start(x0, ctx, cfg_.warm_start_iters);
}

void NfmpcController::plan(const PlanarState& x, const EnvContext& ctx, StepTiming* timing,
                           NfmpcStepRecord* record) {
  PhaseTimer timer;
  const Vec c = context_vector(ctx, x);
  Vec sigma(theta_.diag_var.size());
  for (std::size_t d = 0; d < sigma.size(); ++d) sigma[d] = std::sqrt(theta_.diag_var[d]);
  auto rows = sampler_.draw(static_cast<std::size_t>(cfg_.samples) - 1);
  std::vector<Vec> latents = gaussian_from_halton(rows, theta_.mean, sigma, true);
  if (timing) timing->sample_s += timer.lap();

  std::vector<Vec> controls(latents.size());
  for (std::size_t i = 0; i < latents.size(); ++i)
    controls[i] = flow_.push(latents[i], c).output;
  if (timing) timing->flow_s += timer.lap();

  Vec costs(latents.size());
  for (std::size_t i = 0; i < latents.size(); ++i) costs[i] = cost_fn_(x, controls[i], ctx);
  if (timing) timing->rollout_s += timer.lap();

  Vec weights = softmax_weights(costs, theta_.beta, cfg_.cost_normalization);
  Vec mean_before = theta_.mean;
  SampleBatch batch{std::move(latents), std::move(controls), std::move(costs),
                    std::move(weights)};
  theta_.mean = mppi_latent_update(mean_before, batch, theta_.gamma);
  if (timing) timing->update_s += timer.lap();

  if (record) {
    record->mean_before = std::move(mean_before);
    record->mean_after = theta_.mean;
    record->loss = softmin_cost(batch.costs, theta_.beta);
    record->context = c;
    record->shift_state_in = shift_state_;
    record->batch = std::move(batch);
  }
}

void NfmpcController::shift() {
  if (!shift_model_) return;  // identity
  ShiftEval ev = shift_model_->apply(theta_.mean, shift_state_);
  theta_.mean = std::move(ev.mean);
  shift_state_ = std::move(ev.state);
}

void NfmpcController::warm_start(const PlanarState& x0, const EnvContext& ctx, int iterations) {
  check_config(iterations >= 1, "warm start needs at least one iteration");
  for (int i = 0; i < iterations; ++i) plan(x0, ctx, nullptr, nullptr);
}

Vec NfmpcController::act(const EnvContext& ctx, const PlanarState& x) {
  const Vec c = context_vector(ctx, x);
  return select_action(flow_, theta_.mean, theta_.diag_var, c, cfg_.control_dim,
                       cfg_.deterministic_action,
                       cfg_.deterministic_action ? nullptr : &action_rng_);
}

StepResult NfmpcController::step(const PlanarState& x, const EnvContext& ctx) {
  StepResult res;
  plan(x, ctx, &res.timing, nullptr);
  PhaseTimer timer;
  res.action = act(ctx, x);
  res.timing.flow_s += timer.lap();
  shift();
  res.timing.update_s += timer.lap();
  return res;
}

// ---------------------------------------------------------------------------
// Gaussian MPPI baseline

MppiController::MppiController(const ControllerConfig& cfg, CostEvalFn cost_fn)
    : cfg_(cfg), cost_fn_(std::move(cost_fn)), sampler_(cfg.dim()) {
  check_config(cfg_.samples >= 1, "need at least one sample");
  if (cfg_.spline_degree > 0)
    check_config(cfg_.spline_points >= cfg_.spline_degree + 1,
                 "spline needs at least degree+1 control points");
  mean_.assign(cfg_.dim(), 0.0);
  cov_ = cfg_.init_cov * Eigen::MatrixXd::Identity(cfg_.dim(), cfg_.dim());
}

void MppiController::reset(const EnvContext& ctx, const PlanarState& x0, std::uint64_t seed) {
  mean_.assign(cfg_.dim(), 0.0);
  cov_ = cfg_.init_cov * Eigen::MatrixXd::Identity(cfg_.dim(), cfg_.dim());
  sampler_ = HaltonSampler(cfg_.dim());
  action_rng_ = Rng(seed);
  if (cfg_.warm_start_iters > 0) warm_start(x0, ctx, cfg_.warm_start_iters);
}

void MppiController::plan(const PlanarState& x, const EnvContext& ctx, StepTiming* timing) {
  PhaseTimer timer;
  const int dim = cfg_.dim();
  Eigen::LLT<Eigen::MatrixXd> llt(cov_);
  check_config(llt.info() == Eigen::Success, "covariance lost positive definiteness");
  const Eigen::MatrixXd L = llt.matrixL();

  auto rows = sampler_.draw(static_cast<std::size_t>(cfg_.samples) - 1);
  std::vector<Vec> controls;
  controls.reserve(rows.size() + 1);
  controls.push_back(mean_);
  Eigen::VectorXd eps(dim);
  for (const Vec& row : rows) {
    for (int d = 0; d < dim; ++d) eps(d) = normal_quantile(row[d]);
    Eigen::VectorXd u = L * eps;
    Vec sample(mean_);
    for (int d = 0; d < dim; ++d) sample[d] += u(d);
    controls.push_back(std::move(sample));
  }
  if (cfg_.spline_degree > 0) {
    for (Vec& sample : controls) {
      for (int m = 0; m < cfg_.control_dim; ++m) {
        Vec column(cfg_.horizon);
        for (int h = 0; h < cfg_.horizon; ++h) column[h] = sample[h * cfg_.control_dim + m];
        column = bspline_smooth(column, cfg_.spline_degree, cfg_.spline_points);
        for (int h = 0; h < cfg_.horizon; ++h) sample[h * cfg_.control_dim + m] = column[h];
      }
    }
  }
  if (timing) timing->sample_s += timer.lap();

  Vec costs(controls.size());
  for (std::size_t i = 0; i < controls.size(); ++i) costs[i] = cost_fn_(x, controls[i], ctx);
  if (timing) timing->rollout_s += timer.lap();

  Vec weights = softmax_weights(costs, cfg_.temperature, cfg_.cost_normalization);
  SampleBatch batch{{}, std::move(controls), std::move(costs), std::move(weights)};
  mean_ = mppi_control_update(mean_, batch, cfg_.step_size);
  if (cfg_.adapt_covariance && cfg_.gamma_cov > 0.0)
    cov_ = covariance_adapt(cov_, batch, mean_, cfg_.gamma_cov);
  if (timing) timing->update_s += timer.lap();
}

void MppiController::warm_start(const PlanarState& x0, const EnvContext& ctx, int iterations) {
  check_config(iterations >= 1, "warm start needs at least one iteration");
  for (int i = 0; i < iterations; ++i) plan(x0, ctx, nullptr);
}

StepResult MppiController::step(const PlanarState& x, const EnvContext& ctx) {
  StepResult res;
  plan(x, ctx, &res.timing);
  PhaseTimer timer;
  res.action.assign(mean_.begin(), mean_.begin() + cfg_.control_dim);
  for (double& a : res.action) a = std::clamp(a, -kControlLimit, kControlLimit);
  if (cfg_.shift != "identity") mean_ = shift_standard(mean_, cfg_.control_dim);
  res.timing.update_s += timer.lap();
  return res;
}

// ---------------------------------------------------------------------------
// FlowMPPI baseline

FlowMppiController::FlowMppiController(const ControllerConfig& cfg, const Bijection& flow,
                                       CostEvalFn cost_fn)
    : cfg_(cfg), flow_(flow), cost_fn_(std::move(cost_fn)), sampler_(cfg.dim()) {
  check_config(cfg_.samples >= 2 && cfg_.samples % 2 == 0,
               "flowmppi needs an even sample count");
  check_dim(flow_.dim() == cfg_.dim(), "flow dimension does not match H*M");
  mean_.assign(cfg_.dim(), 0.0);
  cov_ = cfg_.init_cov * Eigen::MatrixXd::Identity(cfg_.dim(), cfg_.dim());
}

Vec FlowMppiController::context_vector(const EnvContext& ctx, const PlanarState& x) const {
  if (!cfg_.conditional) return {};
  Vec c = make_context_vector(ctx, x, cfg_.condition_on_state, cfg_.include_obstacles);
  check_dim(static_cast<int>(c.size()) == flow_.context_dim(),
            "context width does not match the flow");
  return c;
}

void FlowMppiController::reset(const EnvContext& ctx, const PlanarState& x0, std::uint64_t seed) {
  mean_.assign(cfg_.dim(), 0.0);
  cov_ = cfg_.init_cov * Eigen::MatrixXd::Identity(cfg_.dim(), cfg_.dim());
  sampler_ = HaltonSampler(cfg_.dim());
  action_rng_ = Rng(seed);
  if (cfg_.warm_start_iters > 0)
    for (int i = 0; i < cfg_.warm_start_iters; ++i) plan(x0, ctx, nullptr, nullptr);
}

void FlowMppiController::plan(const PlanarState& x, const EnvContext& ctx, StepTiming* timing,
                              SampleBatch* batch_out) {
  PhaseTimer timer;
  const int dim = cfg_.dim();
  const std::size_t half = static_cast<std::size_t>(cfg_.samples) / 2;
  const Vec c = context_vector(ctx, x);

  // half the samples from the (fixed) latent Gaussian of the flow
  Vec zero(dim, 0.0), latent_sigma(dim, std::sqrt(cfg_.latent_cov));
  auto latent_rows = sampler_.draw(half);
  std::vector<Vec> latents = gaussian_from_halton(latent_rows, zero, latent_sigma, false);

  // half Gaussian perturbations of the control-space mean (mean included)
  Eigen::LLT<Eigen::MatrixXd> llt(cov_);
  check_config(llt.info() == Eigen::Success, "covariance lost positive definiteness");
  const Eigen::MatrixXd L = llt.matrixL();
  auto pert_rows = sampler_.draw(half - 1);
  std::vector<Vec> controls(latents.size());
  if (timing) timing->sample_s += timer.lap();

  for (std::size_t i = 0; i < latents.size(); ++i) controls[i] = flow_.push(latents[i], c).output;
  const Vec z_proj = flow_.pull(flow_.clamp_to_domain(mean_), c).output;
  if (timing) timing->flow_s += timer.lap();

  controls.push_back(mean_);
  Eigen::VectorXd eps(dim);
  for (const Vec& row : pert_rows) {
    for (int d = 0; d < dim; ++d) eps(d) = normal_quantile(row[d]);
    Eigen::VectorXd u = L * eps;
    Vec sample(mean_);
    for (int d = 0; d < dim; ++d) sample[d] += u(d);
    controls.push_back(std::move(sample));
  }
  if (timing) timing->sample_s += timer.lap();

  Vec costs(controls.size());
  for (std::size_t i = 0; i < controls.size(); ++i) costs[i] = cost_fn_(x, controls[i], ctx);
  if (timing) timing->rollout_s += timer.lap();

  // penalize latent samples for straying from the projected control mean
  for (std::size_t i = 0; i < latents.size(); ++i) {
    double dev = 0.0;
    for (int d = 0; d < dim; ++d) {
      const double diff = latents[i][d] - z_proj[d];
      dev += diff * diff;
    }
    costs[i] += cfg_.flow_penalty * dev;
  }

  Vec weights = softmax_weights(costs, cfg_.temperature, cfg_.cost_normalization);
  SampleBatch batch{std::move(latents), std::move(controls), std::move(costs),
                    std::move(weights)};
  mean_ = mppi_control_update(mean_, batch, cfg_.step_size);
  if (cfg_.adapt_covariance && cfg_.gamma_cov > 0.0)
    cov_ = covariance_adapt(cov_, batch, mean_, cfg_.gamma_cov);
  if (timing) timing->update_s += timer.lap();
  if (batch_out) *batch_out = std::move(batch);
}

StepResult FlowMppiController::step(const PlanarState& x, const EnvContext& ctx) {
  StepResult res;
  plan(x, ctx, &res.timing, nullptr);
  PhaseTimer timer;
  res.action.assign(mean_.begin(), mean_.begin() + cfg_.control_dim);
  for (double& a : res.action) a = std::clamp(a, -kControlLimit, kControlLimit);
  mean_ = shift_standard(mean_, cfg_.control_dim);
  res.timing.update_s += timer.lap();
  return res;
}

std::unique_ptr<Controller> make_controller(const ControllerConfig& cfg, const Bijection* flow,
                                            ShiftModel* shift, const CostWeights& weights) {
  CostEvalFn cost_fn = default_cost_fn(weights);
  if (cfg.kind == "mppi") return std::make_unique<MppiController>(cfg, std::move(cost_fn));
  if (cfg.kind == "flowmppi") {
    check_config(flow != nullptr, "flowmppi requires a flow model");
    return std::make_unique<FlowMppiController>(cfg, *flow, std::move(cost_fn));
  }
  if (cfg.kind == "nfmpc") {
    check_config(flow != nullptr, "nfmpc requires a flow model");
    return std::make_unique<NfmpcController>(cfg, *flow, shift, std::move(cost_fn));
  }
  throw ConfigError("unknown controller kind '" + cfg.kind + "'");
}

}  // namespace nfmpc
