#include "nfmpc/flow.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

namespace nfmpc {

namespace {

inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

SigmoidLayer SigmoidLayer::broadcast(ConstSpan lower_per_control, ConstSpan upper_per_control,
                                     int horizon) {
  check_dim(lower_per_control.size() == upper_per_control.size(), "bound length mismatch");
  check_config(horizon >= 1, "horizon must be positive");
  const std::size_t M = lower_per_control.size();
  SigmoidLayer layer;
  layer.lower.resize(M * horizon);
  layer.upper.resize(M * horizon);
  for (int h = 0; h < horizon; ++h) {
    for (std::size_t m = 0; m < M; ++m) {
      check_config(lower_per_control[m] < upper_per_control[m],
                   "sigmoid layer requires lower < upper");
      layer.lower[h * M + m] = lower_per_control[m];
      layer.upper[h * M + m] = upper_per_control[m];
    }
  }
  return layer;
}

FlowEval sigmoid_forward(const SigmoidLayer& layer, ConstSpan x) {
  check_dim(x.size() == layer.lower.size(), "sigmoid layer dimension mismatch");
  FlowEval ev{Vec(x.size()), 0.0};
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double w = layer.upper[i] - layer.lower[i];
    double v = w * sigmoid(x[i]) + layer.lower[i];
    // saturated inputs must still land strictly inside the representable range
    if (v <= layer.lower[i]) v = std::nextafter(layer.lower[i], layer.upper[i]);
    if (v >= layer.upper[i]) v = std::nextafter(layer.upper[i], layer.lower[i]);
    ev.output[i] = v;
    ev.log_det += std::log(w) - softplus(-x[i]) - softplus(x[i]);
  }
  return ev;
}

FlowEval sigmoid_inverse(const SigmoidLayer& layer, ConstSpan u, bool tolerant) {
  check_dim(u.size() == layer.lower.size(), "sigmoid layer dimension mismatch");
  FlowEval ev{Vec(u.size()), 0.0};
  for (std::size_t i = 0; i < u.size(); ++i) {
    double v = u[i];
    if (tolerant) v = std::clamp(v, layer.lower[i] + 1e-12, layer.upper[i] - 1e-12);
    check_domain(v > layer.lower[i] && v < layer.upper[i],
                 "sigmoid inverse input on or outside bounds");
    const double w = layer.upper[i] - layer.lower[i];
    const double a = v - layer.lower[i];   // u - b
    const double d = layer.upper[i] - v;   // w - u + b
    ev.output[i] = std::log(a / d);
    ev.log_det += std::log(w) - std::log(a) - std::log(d);
  }
  return ev;
}

CouplingBlock CouplingBlock::make(const std::vector<std::uint8_t>& mask, int context_dim,
                                  const std::vector<int>& hidden, bool layer_norm,
                                  const std::string& prefix) {
  CouplingBlock block;
  block.mask = mask;
  for (int i = 0; i < static_cast<int>(mask.size()); ++i)
    (mask[i] ? block.pass_idx : block.trans_idx).push_back(i);
  check_config(!block.pass_idx.empty() && !block.trans_idx.empty(),
               "coupling mask must leave both partitions nonempty");
  const int in = static_cast<int>(block.pass_idx.size()) + context_dim;
  const int out = static_cast<int>(block.trans_idx.size());
  block.scale_net = NetworkSpec::mlp_uniform(in, hidden, out, Activation::kTanh, layer_norm);
  block.trans_net = NetworkSpec::mlp_uniform(in, hidden, out, Activation::kRelu, layer_norm);
  block.prefix = prefix;
  return block;
}

namespace {

Vec subnet_input(const CouplingBlock& block, ConstSpan y, ConstSpan context) {
  Vec a;
  a.reserve(block.pass_idx.size() + context.size());
  for (int i : block.pass_idx) a.push_back(y[i]);
  a.insert(a.end(), context.begin(), context.end());
  return a;
}

void check_coupling_shapes(const CouplingBlock& block, ConstSpan y, ConstSpan context) {
  check_dim(y.size() == block.mask.size(), "coupling input dimension mismatch");
  check_dim(static_cast<int>(block.pass_idx.size() + context.size()) ==
                block.scale_net.input_size(),
            "coupling context width mismatch");
}

}  // namespace

FlowEval coupling_forward(const CouplingBlock& block, const ParamVector& params, ConstSpan y,
                          ConstSpan context) {
  check_coupling_shapes(block, y, context);
  const Vec a = subnet_input(block, y, context);
  const Vec s = mlp_apply(params, block.prefix + "/s", block.scale_net, a);
  const Vec t = mlp_apply(params, block.prefix + "/t", block.trans_net, a);
  FlowEval ev{Vec(y.begin(), y.end()), 0.0};
  for (std::size_t j = 0; j < block.trans_idx.size(); ++j) {
    ev.output[block.trans_idx[j]] = y[block.trans_idx[j]] * std::exp(s[j]) + t[j];
    ev.log_det += s[j];
  }
  return ev;
}

FlowEval coupling_inverse(const CouplingBlock& block, const ParamVector& params, ConstSpan y,
                          ConstSpan context) {
  check_coupling_shapes(block, y, context);
  const Vec a = subnet_input(block, y, context);
  const Vec s = mlp_apply(params, block.prefix + "/s", block.scale_net, a);
  const Vec t = mlp_apply(params, block.prefix + "/t", block.trans_net, a);
  FlowEval ev{Vec(y.begin(), y.end()), 0.0};
  for (std::size_t j = 0; j < block.trans_idx.size(); ++j) {
    ev.output[block.trans_idx[j]] = (y[block.trans_idx[j]] - t[j]) * std::exp(-s[j]);
    ev.log_det -= s[j];
  }
  return ev;
}

nlohmann::json FlowConfig::to_json() const {
  return nlohmann::json{{"control_dim", control_dim}, {"horizon", horizon},
                        {"context_dim", context_dim}, {"num_blocks", num_blocks},
                        {"hidden_width", hidden_width}, {"hidden_layers", hidden_layers},
                        {"layer_norm", layer_norm},   {"sigmoid_layer", sigmoid_layer},
                        {"lower", lower},             {"upper", upper},
                        {"init_seed", init_seed}};
}

FlowConfig FlowConfig::from_json(const nlohmann::json& j) {
  FlowConfig cfg;
  cfg.control_dim = j.at("control_dim").get<int>();
  cfg.horizon = j.at("horizon").get<int>();
  cfg.context_dim = j.at("context_dim").get<int>();
  cfg.num_blocks = j.at("num_blocks").get<int>();
  cfg.hidden_width = j.at("hidden_width").get<int>();
  cfg.hidden_layers = j.at("hidden_layers").get<int>();
  cfg.layer_norm = j.at("layer_norm").get<bool>();
  cfg.sigmoid_layer = j.at("sigmoid_layer").get<bool>();
  cfg.lower = j.at("lower").get<Vec>();
  cfg.upper = j.at("upper").get<Vec>();
  cfg.init_seed = j.at("init_seed").get<std::uint64_t>();
  return cfg;
}

FlowModel::FlowModel(const FlowConfig& cfg) : cfg_(cfg) {
  check_config(cfg.control_dim >= 1 && cfg.horizon >= 1, "flow dimensions must be positive");
  check_config(cfg.num_blocks >= 0, "block count must be nonnegative");
  check_config(cfg.num_blocks == 0 || cfg.dim() >= 2,
               "coupling blocks need at least two dimensions");
  Rng rng(cfg.init_seed);
  const int dim = cfg.dim();
  std::vector<int> hidden(cfg.hidden_layers, cfg.hidden_width);
  for (int k = 0; k < cfg.num_blocks; ++k) {
    // alternate even/odd pass-through indices between consecutive blocks
    std::vector<std::uint8_t> mask(dim);
    for (int i = 0; i < dim; ++i) mask[i] = static_cast<std::uint8_t>((i + k) % 2 == 0);
    blocks_.push_back(CouplingBlock::make(mask, cfg.context_dim, hidden, cfg.layer_norm,
                                          "block" + std::to_string(k)));
    mlp_init(params_, blocks_.back().prefix + "/s", blocks_.back().scale_net, rng);
    mlp_init(params_, blocks_.back().prefix + "/t", blocks_.back().trans_net, rng);
  }
  if (cfg.sigmoid_layer) {
    check_config(static_cast<int>(cfg.lower.size()) == cfg.control_dim &&
                     static_cast<int>(cfg.upper.size()) == cfg.control_dim,
                 "sigmoid layer needs one bound pair per control dimension");
    sigmoid_ = SigmoidLayer::broadcast(cfg.lower, cfg.upper, cfg.horizon);
  }
}

FlowEval FlowModel::push(ConstSpan z, ConstSpan context) const {
  check_dim(static_cast<int>(z.size()) == dim(), "flow push dimension mismatch");
  FlowEval ev{Vec(z.begin(), z.end()), 0.0};
  for (const CouplingBlock& block : blocks_) {
    FlowEval step = coupling_forward(block, params_, ev.output, context);
    ev.output = std::move(step.output);
    ev.log_det += step.log_det;
  }
  if (sigmoid_) {
    FlowEval step = sigmoid_forward(*sigmoid_, ev.output);
    ev.output = std::move(step.output);
    ev.log_det += step.log_det;
  }
  return ev;
}

FlowEval FlowModel::pull(ConstSpan u, ConstSpan context) const {
  check_dim(static_cast<int>(u.size()) == dim(), "flow pull dimension mismatch");
  FlowEval ev{Vec(u.begin(), u.end()), 0.0};
  if (sigmoid_) {
    FlowEval step = sigmoid_inverse(*sigmoid_, ev.output);
    ev.output = std::move(step.output);
    ev.log_det += step.log_det;
  }
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
    FlowEval step = coupling_inverse(*it, params_, ev.output, context);
    ev.output = std::move(step.output);
    ev.log_det += step.log_det;
  }
  return ev;
}

void FlowModel::pull_vjp(ConstSpan u, ConstSpan context, ConstSpan g_z, double g_logdet,
                         ParamVector& grad) const {
  check_dim(static_cast<int>(u.size()) == dim() && g_z.size() == u.size(),
            "pull_vjp dimension mismatch");

  // Forward trace of the pull, keeping each inverse block's input and its
  // subnet evaluations for the reverse pass.
  Vec cur(u.begin(), u.end());
  if (sigmoid_) cur = sigmoid_inverse(*sigmoid_, cur).output;
  const std::size_t K = blocks_.size();
  std::vector<Vec> block_inputs(K);
  std::vector<MlpCache> s_cache(K), t_cache(K);
  for (std::size_t r = 0; r < K; ++r) {
    const std::size_t k = K - 1 - r;
    const CouplingBlock& block = blocks_[k];
    block_inputs[k] = cur;
    const Vec a = subnet_input(block, cur, context);
    const Vec& s = mlp_apply_cached(params_, block.prefix + "/s", block.scale_net, a, s_cache[k]);
    const Vec& t = mlp_apply_cached(params_, block.prefix + "/t", block.trans_net, a, t_cache[k]);
    for (std::size_t j = 0; j < block.trans_idx.size(); ++j) {
      const int idx = block.trans_idx[j];
      cur[idx] = (cur[idx] - t[j]) * std::exp(-s[j]);
    }
  }

  // Reverse pass: block 0's inverse was applied last, so it comes first.
  Vec g(g_z.begin(), g_z.end());
  for (std::size_t k = 0; k < K; ++k) {
    const CouplingBlock& block = blocks_[k];
    const Vec& y = block_inputs[k];
    const Vec& s = s_cache[k].output;
    const Vec& t = t_cache[k].output;

    const std::size_t n2 = block.trans_idx.size();
    Vec ds(n2), dt(n2);
    for (std::size_t j = 0; j < n2; ++j) {
      const double es = std::exp(-s[j]);
      const double xj = (y[block.trans_idx[j]] - t[j]) * es;  // block output, transformed part
      const double gx = g[block.trans_idx[j]];
      ds[j] = -gx * xj - g_logdet;  // map term + d(-sum s)/ds
      dt[j] = -gx * es;
      g[block.trans_idx[j]] = gx * es;
    }
    Vec ga_s =
        mlp_backward_cached(params_, block.prefix + "/s", block.scale_net, s_cache[k], ds, grad);
    Vec ga_t =
        mlp_backward_cached(params_, block.prefix + "/t", block.trans_net, t_cache[k], dt, grad);
    for (std::size_t j = 0; j < block.pass_idx.size(); ++j)
      g[block.pass_idx[j]] += ga_s[j] + ga_t[j];
  }
  // The sigmoid stage has no parameters; its input gradient is not needed.
}

Vec FlowModel::clamp_to_domain(ConstSpan u) const {
  Vec v(u.begin(), u.end());
  if (sigmoid_) {
    for (std::size_t i = 0; i < v.size(); ++i)
      v[i] = std::clamp(v[i], sigmoid_->lower[i] + 1e-12, sigmoid_->upper[i] - 1e-12);
  }
  return v;
}

void FlowModel::save(const std::string& path) const { save(path, nlohmann::json::object()); }

void FlowModel::save(const std::string& path, const nlohmann::json& extra_meta) const {
  nlohmann::json meta;
  meta["flow_config"] = cfg_.to_json();
  if (!extra_meta.is_null() && !extra_meta.empty()) meta["extra"] = extra_meta;
  save_checkpoint(params_, meta, path);
}

FlowModel FlowModel::load(const std::string& path, nlohmann::json* extra_meta) {
  nlohmann::json meta;
  ParamVector params = load_checkpoint(path, &meta);
  FlowModel model(FlowConfig::from_json(meta.at("flow_config")));
  check_config(model.params_.same_layout(params), "flow checkpoint layout mismatch: " + path);
  std::copy(params.values().begin(), params.values().end(), model.params_.values().begin());
  if (extra_meta) *extra_meta = meta.value("extra", nlohmann::json::object());
  return model;
}

double gaussian_log_density(ConstSpan x, ConstSpan mean, ConstSpan diag_var) {
  check_dim(x.size() == mean.size() && x.size() == diag_var.size(),
            "gaussian density dimension mismatch");
  constexpr double kLog2Pi = 1.8378770664093454836;
  double lp = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - mean[i];
    lp += -0.5 * (kLog2Pi + std::log(diag_var[i]) + d * d / diag_var[i]);
  }
  return lp;
}

double log_likelihood(const Bijection& flow, ConstSpan mean, ConstSpan diag_var, ConstSpan u,
                      ConstSpan context) {
  const FlowEval ev = flow.pull(u, context);
  return gaussian_log_density(ev.output, mean, diag_var) + ev.log_det;
}

Vec log_likelihood_grad(const Bijection& flow, ConstSpan mean, ConstSpan diag_var, ConstSpan u,
                        ConstSpan context, ParamVector& grad, double scale, FlowEval* eval_out) {
  const FlowEval ev = flow.pull(u, context);
  Vec g_z(u.size());
  Vec d_mean(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double r = (ev.output[i] - mean[i]) / diag_var[i];
    g_z[i] = -scale * r;
    d_mean[i] = scale * r;
  }
  flow.pull_vjp(u, context, g_z, scale, grad);
  if (eval_out) *eval_out = ev;
  return d_mean;
}

}  // namespace nfmpc
