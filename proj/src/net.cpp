#include "nfmpc/net.hpp"

#include <algorithm>
#include <cmath>

namespace nfmpc {

Activation activation_from_string(const std::string& name) {
  if (name == "tanh") return Activation::kTanh;
  if (name == "relu") return Activation::kRelu;
  if (name == "identity") return Activation::kIdentity;
  throw ConfigError("unknown activation '" + name + "'");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::kTanh: return "tanh";
    case Activation::kRelu: return "relu";
    case Activation::kIdentity: return "identity";
  }
  return "identity";
}

NetworkSpec NetworkSpec::mlp(const std::vector<int>& sizes, const std::vector<Activation>& acts,
                             const std::vector<bool>& layer_norm) {
  check_config(sizes.size() >= 2, "network needs at least one layer");
  check_config(acts.size() == sizes.size() - 1 && layer_norm.size() == sizes.size() - 1,
               "one activation and layer-norm flag per layer required");
  NetworkSpec spec;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    check_config(sizes[i] > 0 && sizes[i + 1] > 0, "layer sizes must be positive");
    spec.layers.push_back({sizes[i], sizes[i + 1], acts[i], layer_norm[i]});
  }
  return spec;
}

NetworkSpec NetworkSpec::mlp_uniform(int input, const std::vector<int>& hidden, int output,
                                     Activation hidden_act, bool hidden_layer_norm) {
  std::vector<int> sizes{input};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(output);
  std::vector<Activation> acts(hidden.size(), hidden_act);
  acts.push_back(Activation::kIdentity);
  std::vector<bool> ln(hidden.size(), hidden_layer_norm);
  ln.push_back(false);
  return mlp(sizes, acts, ln);
}

namespace {

std::string lname(const std::string& prefix, std::size_t i, const char* part) {
  return prefix + "/l" + std::to_string(i) + "/" + part;
}

// y = W x + b, W row-major (out x in)
void affine(ConstSpan W, ConstSpan b, ConstSpan x, Span y) {
  const std::size_t out = b.size(), in = x.size();
  for (std::size_t i = 0; i < out; ++i) {
    double s = b[i];
    const double* row = W.data() + i * in;
    for (std::size_t j = 0; j < in; ++j) s += row[j] * x[j];
    y[i] = s;
  }
}

void apply_activation(Activation act, Span v) {
  switch (act) {
    case Activation::kTanh:
      for (double& x : v) x = std::tanh(x);
      break;
    case Activation::kRelu:
      for (double& x : v) x = x > 0.0 ? x : 0.0;
      break;
    case Activation::kIdentity:
      break;
  }
}

// d(act)/d(pre) given pre-activation values
void activation_grad(Activation act, ConstSpan pre, Span g) {
  switch (act) {
    case Activation::kTanh:
      for (std::size_t i = 0; i < pre.size(); ++i) {
        const double t = std::tanh(pre[i]);
        g[i] *= 1.0 - t * t;
      }
      break;
    case Activation::kRelu:
      for (std::size_t i = 0; i < pre.size(); ++i)
        if (pre[i] <= 0.0) g[i] = 0.0;
      break;
    case Activation::kIdentity:
      break;
  }
}

void mlp_forward_trace(const ParamVector& params, const std::string& prefix,
                       const NetworkSpec& spec, ConstSpan input, MlpCache& tr) {
  check_dim(static_cast<int>(input.size()) == spec.input_size(),
            "mlp input size " + std::to_string(input.size()) + " != spec input " +
                std::to_string(spec.input_size()));
  tr.inputs.clear();
  tr.linear.clear();
  tr.pre_act.clear();
  Vec x(input.begin(), input.end());
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const LayerSpec& ls = spec.layers[l];
    tr.inputs.push_back(x);
    Vec z(ls.out);
    affine(params.seg(lname(prefix, l, "W")), params.seg(lname(prefix, l, "b")), x, z);
    tr.linear.push_back(z);
    Vec pre = ls.layer_norm ? layer_norm_apply(z, params.seg(lname(prefix, l, "ln_g")),
                                               params.seg(lname(prefix, l, "ln_b")))
                            : z;
    tr.pre_act.push_back(pre);
    apply_activation(ls.act, pre);
    x = std::move(pre);
  }
  tr.output = std::move(x);
}

}  // namespace

void mlp_init(ParamVector& params, const std::string& prefix, const NetworkSpec& spec, Rng& rng,
              bool zero_final_layer) {
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const LayerSpec& ls = spec.layers[l];
    params.add_segment(lname(prefix, l, "W"), ls.out, ls.in);
    params.add_segment(lname(prefix, l, "b"), ls.out);
    if (ls.layer_norm) {
      params.add_segment(lname(prefix, l, "ln_g"), ls.out);
      params.add_segment(lname(prefix, l, "ln_b"), ls.out);
    }
  }
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const LayerSpec& ls = spec.layers[l];
    const bool zero = zero_final_layer && l + 1 == spec.layers.size();
    const double bound = 1.0 / std::sqrt(static_cast<double>(ls.in));
    for (double& w : params.seg(lname(prefix, l, "W"))) w = zero ? 0.0 : rng.uniform(-bound, bound);
    for (double& x : params.seg(lname(prefix, l, "b"))) x = zero ? 0.0 : rng.uniform(-bound, bound);
    if (ls.layer_norm) {
      for (double& g : params.seg(lname(prefix, l, "ln_g"))) g = 1.0;
    }
  }
}

Vec mlp_apply(const ParamVector& params, const std::string& prefix, const NetworkSpec& spec,
              ConstSpan input) {
  MlpCache cache;
  mlp_forward_trace(params, prefix, spec, input, cache);
  return std::move(cache.output);
}

const Vec& mlp_apply_cached(const ParamVector& params, const std::string& prefix,
                            const NetworkSpec& spec, ConstSpan input, MlpCache& cache) {
  mlp_forward_trace(params, prefix, spec, input, cache);
  return cache.output;
}

Vec mlp_backward_cached(const ParamVector& params, const std::string& prefix,
                        const NetworkSpec& spec, const MlpCache& tr, ConstSpan upstream_grad,
                        ParamVector& grad) {
  check_dim(static_cast<int>(upstream_grad.size()) == spec.output_size(),
            "upstream gradient size mismatch");
  Vec g(upstream_grad.begin(), upstream_grad.end());
  for (std::size_t l = spec.layers.size(); l-- > 0;) {
    const LayerSpec& ls = spec.layers[l];
    activation_grad(ls.act, tr.pre_act[l], g);
    Vec gz;
    if (ls.layer_norm) {
      gz = layer_norm_backward(tr.linear[l], params.seg(lname(prefix, l, "ln_g")), g,
                               grad.seg(lname(prefix, l, "ln_g")),
                               grad.seg(lname(prefix, l, "ln_b")));
    } else {
      gz = std::move(g);
    }
    Span dW = grad.seg(lname(prefix, l, "W"));
    Span db = grad.seg(lname(prefix, l, "b"));
    ConstSpan W = params.seg(lname(prefix, l, "W"));
    const Vec& x = tr.inputs[l];
    Vec gx(ls.in, 0.0);
    for (int i = 0; i < ls.out; ++i) {
      db[i] += gz[i];
      double* dWrow = dW.data() + static_cast<std::size_t>(i) * ls.in;
      const double* Wrow = W.data() + static_cast<std::size_t>(i) * ls.in;
      for (int j = 0; j < ls.in; ++j) {
        dWrow[j] += gz[i] * x[j];
        gx[j] += Wrow[j] * gz[i];
      }
    }
    g = std::move(gx);
  }
  return g;
}

Vec mlp_backward(const ParamVector& params, const std::string& prefix, const NetworkSpec& spec,
                 ConstSpan input, ConstSpan upstream_grad, ParamVector& grad) {
  MlpCache cache;
  mlp_forward_trace(params, prefix, spec, input, cache);
  return mlp_backward_cached(params, prefix, spec, cache, upstream_grad, grad);
}

GradientRecord mlp_backward(const ParamVector& params, const std::string& prefix,
                            const NetworkSpec& spec, ConstSpan input, ConstSpan upstream_grad) {
  GradientRecord rec = GradientRecord::zeros_like(params);
  rec.input_grad = mlp_backward(params, prefix, spec, input, upstream_grad, rec.grads);
  return rec;
}

Vec layer_norm_apply(ConstSpan input, ConstSpan gain, ConstSpan bias, double eps) {
  check_dim(gain.size() == input.size() && bias.size() == input.size(),
            "layer norm gain/bias length mismatch");
  check_config(eps > 0.0, "layer norm eps must be positive");
  const std::size_t n = input.size();
  double mean = 0.0;
  for (double x : input) mean += x;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double x : input) var += (x - mean) * (x - mean);
  var /= static_cast<double>(n);
  const double inv_sigma = 1.0 / std::sqrt(var + eps);
  Vec out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = gain[i] * (input[i] - mean) * inv_sigma + bias[i];
  return out;
}

Vec layer_norm_backward(ConstSpan input, ConstSpan gain, ConstSpan upstream, Span gain_grad,
                        Span bias_grad, double eps) {
  check_dim(gain.size() == input.size() && upstream.size() == input.size(),
            "layer norm backward length mismatch");
  const std::size_t n = input.size();
  const double nd = static_cast<double>(n);
  double mean = 0.0;
  for (double x : input) mean += x;
  mean /= nd;
  double var = 0.0;
  for (double x : input) var += (x - mean) * (x - mean);
  var /= nd;
  const double inv_sigma = 1.0 / std::sqrt(var + eps);

  Vec xhat(n), gxhat(n);
  double mean_g = 0.0, mean_gx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    xhat[i] = (input[i] - mean) * inv_sigma;
    gain_grad[i] += upstream[i] * xhat[i];
    bias_grad[i] += upstream[i];
    gxhat[i] = upstream[i] * gain[i];
    mean_g += gxhat[i];
    mean_gx += gxhat[i] * xhat[i];
  }
  mean_g /= nd;
  mean_gx /= nd;
  Vec dx(n);
  for (std::size_t i = 0; i < n; ++i)
    dx[i] = inv_sigma * (gxhat[i] - mean_g - xhat[i] * mean_gx);
  return dx;
}

namespace {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Vec lstm_gates(const ParamVector& params, const std::string& prefix, const LstmSpec& spec,
               const LstmState& state, ConstSpan input) {
  check_dim(static_cast<int>(input.size()) == spec.input, "lstm input size mismatch");
  check_dim(static_cast<int>(state.h.size()) == spec.hidden &&
                static_cast<int>(state.c.size()) == spec.hidden,
            "lstm state size mismatch");
  ConstSpan Wx = params.seg(prefix + "/Wx");
  ConstSpan Wh = params.seg(prefix + "/Wh");
  ConstSpan b = params.seg(prefix + "/b");
  const int H = spec.hidden, I = spec.input;
  Vec a(4 * H);
  for (int i = 0; i < 4 * H; ++i) {
    double s = b[i];
    const double* wx = Wx.data() + static_cast<std::size_t>(i) * I;
    for (int j = 0; j < I; ++j) s += wx[j] * input[j];
    const double* wh = Wh.data() + static_cast<std::size_t>(i) * H;
    for (int j = 0; j < H; ++j) s += wh[j] * state.h[j];
    a[i] = s;
  }
  return a;
}

}  // namespace

void lstm_init(ParamVector& params, const std::string& prefix, const LstmSpec& spec, Rng& rng) {
  params.add_segment(prefix + "/Wx", 4 * spec.hidden, spec.input);
  params.add_segment(prefix + "/Wh", 4 * spec.hidden, spec.hidden);
  params.add_segment(prefix + "/b", 4 * spec.hidden);
  const double bound = 1.0 / std::sqrt(static_cast<double>(spec.hidden));
  for (double& w : params.seg(prefix + "/Wx")) w = rng.uniform(-bound, bound);
  for (double& w : params.seg(prefix + "/Wh")) w = rng.uniform(-bound, bound);
  Span b = params.seg(prefix + "/b");
  for (double& x : b) x = rng.uniform(-bound, bound);
  // forget-gate bias starts at 1
  for (int i = spec.hidden; i < 2 * spec.hidden; ++i) b[i] = 1.0;
}

LstmState lstm_step(const ParamVector& params, const std::string& prefix, const LstmSpec& spec,
                    const LstmState& state, ConstSpan input) {
  const int H = spec.hidden;
  Vec a = lstm_gates(params, prefix, spec, state, input);
  LstmState next{Vec(H), Vec(H)};
  for (int i = 0; i < H; ++i) {
    const double gi = sigmoid(a[i]);
    const double gf = sigmoid(a[H + i]);
    const double gg = std::tanh(a[2 * H + i]);
    const double go = sigmoid(a[3 * H + i]);
    next.c[i] = gf * state.c[i] + gi * gg;
    next.h[i] = go * std::tanh(next.c[i]);
  }
  return next;
}

LstmBackwardResult lstm_backward(const ParamVector& params, const std::string& prefix,
                                 const LstmSpec& spec, const LstmState& state, ConstSpan input,
                                 ConstSpan grad_h_out, ConstSpan grad_c_out, ParamVector& grad) {
  const int H = spec.hidden, I = spec.input;
  check_dim(static_cast<int>(grad_h_out.size()) == H && static_cast<int>(grad_c_out.size()) == H,
            "lstm upstream gradient size mismatch");
  Vec a = lstm_gates(params, prefix, spec, state, input);

  Vec da(4 * H);
  LstmBackwardResult res{Vec(I, 0.0), LstmState{Vec(H, 0.0), Vec(H, 0.0)}};
  for (int i = 0; i < H; ++i) {
    const double gi = sigmoid(a[i]);
    const double gf = sigmoid(a[H + i]);
    const double gg = std::tanh(a[2 * H + i]);
    const double go = sigmoid(a[3 * H + i]);
    const double c_next = gf * state.c[i] + gi * gg;
    const double tc = std::tanh(c_next);

    const double dgo = grad_h_out[i] * tc;
    const double dc = grad_c_out[i] + grad_h_out[i] * go * (1.0 - tc * tc);
    const double dgf = dc * state.c[i];
    const double dgi = dc * gg;
    const double dgg = dc * gi;
    res.state_grad.c[i] = dc * gf;

    da[i] = dgi * gi * (1.0 - gi);
    da[H + i] = dgf * gf * (1.0 - gf);
    da[2 * H + i] = dgg * (1.0 - gg * gg);
    da[3 * H + i] = dgo * go * (1.0 - go);
  }

  Span dWx = grad.seg(prefix + "/Wx");
  Span dWh = grad.seg(prefix + "/Wh");
  Span db = grad.seg(prefix + "/b");
  ConstSpan Wx = params.seg(prefix + "/Wx");
  ConstSpan Wh = params.seg(prefix + "/Wh");
  for (int i = 0; i < 4 * H; ++i) {
    db[i] += da[i];
    double* dwx = dWx.data() + static_cast<std::size_t>(i) * I;
    const double* wx = Wx.data() + static_cast<std::size_t>(i) * I;
    for (int j = 0; j < I; ++j) {
      dwx[j] += da[i] * input[j];
      res.input_grad[j] += wx[j] * da[i];
    }
    double* dwh = dWh.data() + static_cast<std::size_t>(i) * H;
    const double* wh = Wh.data() + static_cast<std::size_t>(i) * H;
    for (int j = 0; j < H; ++j) {
      dwh[j] += da[i] * state.h[j];
      res.state_grad.h[j] += wh[j] * da[i];
    }
  }
  return res;
}

}  // namespace nfmpc
