#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "nfmpc/common.hpp"
#include "nfmpc/net.hpp"
#include "nfmpc/param_vector.hpp"

namespace nfmpc {

struct FlowEval {
  Vec output;
  double log_det = 0.0;  // log |det d(output)/d(input)|
};

/// Invertible conditional map between the latent space and the control space
/// with a tractable log-determinant and a reverse-mode parameter gradient
/// through the pull (control -> latent) direction.
class Bijection {
 public:
  virtual ~Bijection() = default;

  virtual int dim() const = 0;
  virtual int context_dim() const = 0;
  virtual const ParamVector& params() const = 0;
  virtual ParamVector& params() = 0;

  virtual FlowEval push(ConstSpan z, ConstSpan context) const = 0;  // latent -> control
  virtual FlowEval pull(ConstSpan u, ConstSpan context) const = 0;  // control -> latent

  /// Accumulates into `grad` the parameter gradient of
  ///   g_z . pull(u) + g_logdet * pull_log_det(u)
  /// holding u and the context fixed.
  virtual void pull_vjp(ConstSpan u, ConstSpan context, ConstSpan g_z, double g_logdet,
                        ParamVector& grad) const = 0;

  /// Nearest point of u inside the pull domain (identity for unbounded maps).
  virtual Vec clamp_to_domain(ConstSpan u) const { return Vec(u.begin(), u.end()); }
};

/// Scaled sigmoid constraining each dimension to (lower, upper).
struct SigmoidLayer {
  Vec lower;
  Vec upper;  // element-wise, lower < upper

  /// Per-control-dimension bounds broadcast over the horizon
  /// (dimension index = step * M + control).
  static SigmoidLayer broadcast(ConstSpan lower_per_control, ConstSpan upper_per_control,
                                int horizon);
};

FlowEval sigmoid_forward(const SigmoidLayer& layer, ConstSpan x);

/// Exact logit inverse. Strict mode (default) rejects inputs on or outside
/// the bounds; tolerant mode clamps them 1e-12 inside first.
FlowEval sigmoid_inverse(const SigmoidLayer& layer, ConstSpan u, bool tolerant = false);

/// One affine coupling block. mask[i] != 0 marks the pass-through partition;
/// the other partition is scaled and translated by networks of the
/// pass-through values concatenated with the context.
struct CouplingBlock {
  std::vector<std::uint8_t> mask;
  std::vector<int> pass_idx;
  std::vector<int> trans_idx;
  NetworkSpec scale_net;
  NetworkSpec trans_net;
  std::string prefix;

  static CouplingBlock make(const std::vector<std::uint8_t>& mask, int context_dim,
                            const std::vector<int>& hidden, bool layer_norm,
                            const std::string& prefix);
};

FlowEval coupling_forward(const CouplingBlock& block, const ParamVector& params, ConstSpan y,
                          ConstSpan context);
FlowEval coupling_inverse(const CouplingBlock& block, const ParamVector& params, ConstSpan y,
                          ConstSpan context);

struct FlowConfig {
  int control_dim = 2;   // M
  int horizon = 32;      // H
  int context_dim = 0;
  int num_blocks = 5;    // RealNVP blocks
  int hidden_width = 128;
  int hidden_layers = 1;
  bool layer_norm = true;
  bool sigmoid_layer = true;
  Vec lower;  // per control dimension, required with sigmoid_layer
  Vec upper;
  std::uint64_t init_seed = 0;

  int dim() const { return control_dim * horizon; }

  nlohmann::json to_json() const;
  static FlowConfig from_json(const nlohmann::json& j);
};

/// Conditional RealNVP flow over stacked control sequences: alternating-mask
/// coupling blocks, then an optional scaled-sigmoid output layer. All
/// trainable values live in one ParamVector.
class FlowModel : public Bijection {
 public:
  explicit FlowModel(const FlowConfig& cfg);

  int dim() const override { return cfg_.dim(); }
  int context_dim() const override { return cfg_.context_dim; }
  const ParamVector& params() const override { return params_; }
  ParamVector& params() override { return params_; }
  const FlowConfig& config() const { return cfg_; }
  const std::vector<CouplingBlock>& blocks() const { return blocks_; }
  const std::optional<SigmoidLayer>& sigmoid() const { return sigmoid_; }

  FlowEval push(ConstSpan z, ConstSpan context) const override;
  FlowEval pull(ConstSpan u, ConstSpan context) const override;
  void pull_vjp(ConstSpan u, ConstSpan context, ConstSpan g_z, double g_logdet,
                ParamVector& grad) const override;
  Vec clamp_to_domain(ConstSpan u) const override;

  void save(const std::string& path) const;
  void save(const std::string& path, const nlohmann::json& extra_meta) const;
  static FlowModel load(const std::string& path, nlohmann::json* extra_meta = nullptr);

 private:
  FlowConfig cfg_;
  std::vector<CouplingBlock> blocks_;
  std::optional<SigmoidLayer> sigmoid_;
  ParamVector params_;
};

/// The trivial flow (u = z), the Gaussian-MPPI limit of the latent machinery.
class IdentityBijection : public Bijection {
 public:
  explicit IdentityBijection(int dim) : dim_(dim) {}
  int dim() const override { return dim_; }
  int context_dim() const override { return 0; }
  const ParamVector& params() const override { return params_; }
  ParamVector& params() override { return params_; }
  FlowEval push(ConstSpan z, ConstSpan) const override { return {Vec(z.begin(), z.end()), 0.0}; }
  FlowEval pull(ConstSpan u, ConstSpan) const override { return {Vec(u.begin(), u.end()), 0.0}; }
  void pull_vjp(ConstSpan, ConstSpan, ConstSpan, double, ParamVector&) const override {}

 private:
  int dim_;
  ParamVector params_;
};

double gaussian_log_density(ConstSpan x, ConstSpan mean, ConstSpan diag_var);

/// log pi(u | c) of the composed flow under a diagonal latent Gaussian.
double log_likelihood(const Bijection& flow, ConstSpan mean, ConstSpan diag_var, ConstSpan u,
                      ConstSpan context);

/// Accumulates scale * d(log_likelihood)/d(params) into grad and returns
/// scale * d(log_likelihood)/d(mean); `eval_out`, when given, receives the
/// pull evaluation.
Vec log_likelihood_grad(const Bijection& flow, ConstSpan mean, ConstSpan diag_var, ConstSpan u,
                        ConstSpan context, ParamVector& grad, double scale = 1.0,
                        FlowEval* eval_out = nullptr);

}  // namespace nfmpc
