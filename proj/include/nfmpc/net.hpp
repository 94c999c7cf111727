#pragma once

#include <string>
#include <vector>

#include "nfmpc/common.hpp"
#include "nfmpc/param_vector.hpp"

namespace nfmpc {

enum class Activation { kTanh, kRelu, kIdentity };

Activation activation_from_string(const std::string& name);
std::string to_string(Activation a);

struct LayerSpec {
  int in = 0;
  int out = 0;
  Activation act = Activation::kIdentity;
  bool layer_norm = false;
};

/// Fully-connected network description. Layer i maps sizes[i] -> sizes[i+1];
/// when a layer norm flag is set the pre-activation is normalized (with
/// learned gain/bias) before the nonlinearity.
struct NetworkSpec {
  std::vector<LayerSpec> layers;

  static NetworkSpec mlp(const std::vector<int>& sizes, const std::vector<Activation>& acts,
                         const std::vector<bool>& layer_norm);
  /// Hidden layers share `hidden_act` + optional layer norm; output layer is linear.
  static NetworkSpec mlp_uniform(int input, const std::vector<int>& hidden, int output,
                                 Activation hidden_act, bool hidden_layer_norm);

  int input_size() const { return layers.front().in; }
  int output_size() const { return layers.back().out; }
};

/// Registers the spec's weight/bias (and layer-norm gain/bias) segments under
/// `prefix` and initializes them: scaled-uniform fan-in for hidden layers,
/// zeros for the final layer so stacked blocks start as the identity.
void mlp_init(ParamVector& params, const std::string& prefix, const NetworkSpec& spec, Rng& rng,
              bool zero_final_layer = true);

Vec mlp_apply(const ParamVector& params, const std::string& prefix, const NetworkSpec& spec,
              ConstSpan input);

/// Gradients of upstream_grad . output with respect to every parameter under
/// `prefix` (accumulated into `grad`) and to the input (returned).
Vec mlp_backward(const ParamVector& params, const std::string& prefix, const NetworkSpec& spec,
                 ConstSpan input, ConstSpan upstream_grad, ParamVector& grad);

GradientRecord mlp_backward(const ParamVector& params, const std::string& prefix,
                            const NetworkSpec& spec, ConstSpan input, ConstSpan upstream_grad);

/// Forward intermediates kept for a later backward pass, avoiding the
/// recomputation mlp_backward would otherwise do.
struct MlpCache {
  std::vector<Vec> inputs;
  std::vector<Vec> linear;
  std::vector<Vec> pre_act;
  Vec output;
};

const Vec& mlp_apply_cached(const ParamVector& params, const std::string& prefix,
                            const NetworkSpec& spec, ConstSpan input, MlpCache& cache);

Vec mlp_backward_cached(const ParamVector& params, const std::string& prefix,
                        const NetworkSpec& spec, const MlpCache& cache, ConstSpan upstream_grad,
                        ParamVector& grad);

inline constexpr double kLayerNormEps = 1e-5;

Vec layer_norm_apply(ConstSpan input, ConstSpan gain, ConstSpan bias, double eps = kLayerNormEps);

/// Backward of layer_norm_apply: returns d(input) and accumulates d(gain), d(bias).
Vec layer_norm_backward(ConstSpan input, ConstSpan gain, ConstSpan upstream, Span gain_grad,
                        Span bias_grad, double eps = kLayerNormEps);

struct LstmSpec {
  int input = 0;
  int hidden = 0;
};

struct LstmState {
  Vec h;
  Vec c;

  static LstmState zeros(int hidden) { return LstmState{Vec(hidden, 0.0), Vec(hidden, 0.0)}; }
};

/// Segments "<prefix>/Wx" (4H x I), "<prefix>/Wh" (4H x H), "<prefix>/b" (4H).
/// Gate order within the 4H axis: input, forget, candidate, output.
/// Forget-gate bias starts at 1.
void lstm_init(ParamVector& params, const std::string& prefix, const LstmSpec& spec, Rng& rng);

LstmState lstm_step(const ParamVector& params, const std::string& prefix, const LstmSpec& spec,
                    const LstmState& state, ConstSpan input);

struct LstmBackwardResult {
  Vec input_grad;
  LstmState state_grad;  // d(h_in), d(c_in)
};

/// Backward through one cell step given upstream gradients on h' and c'.
LstmBackwardResult lstm_backward(const ParamVector& params, const std::string& prefix,
                                 const LstmSpec& spec, const LstmState& state, ConstSpan input,
                                 ConstSpan grad_h_out, ConstSpan grad_c_out, ParamVector& grad);

}  // namespace nfmpc
