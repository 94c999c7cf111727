#include "nfmpc/verify.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "nfmpc/bench.hpp"
#include "nfmpc/controller.hpp"
#include "nfmpc/net.hpp"
#include "nfmpc/sampling.hpp"
#include "nfmpc/training.hpp"

namespace nfmpc::verify {

Vec finite_diff_params(ParamVector& params, const std::function<double()>& f, double base_step) {
  Vec grad(params.size());
  Span values = params.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    const double h = base_step * std::max(1.0, std::abs(saved));
    values[i] = saved + h;
    const double fp = f();
    values[i] = saved - h;
    const double fm = f();
    values[i] = saved;
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

double rel_err(double a, double b, double floor) {
  return std::abs(a - b) / std::max({floor, std::abs(a), std::abs(b)});
}

double max_rel_err(ConstSpan a, ConstSpan b, double floor) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, rel_err(a[i], b[i], floor));
  return worst;
}

AffineExpFlow::AffineExpFlow(double lambda0, double c0, double c1) : c0_(c0), c1_(c1) {
  params_.add_segment("theta", 1);
  params_.seg("theta")[0] = lambda0;
}

FlowEval AffineExpFlow::push(ConstSpan z, ConstSpan) const {
  const double l = lambda();
  return {{std::exp(l) * z[0] + c0_ * l + c1_}, l};
}

FlowEval AffineExpFlow::pull(ConstSpan u, ConstSpan) const {
  const double l = lambda();
  return {{(u[0] - c0_ * l - c1_) * std::exp(-l)}, -l};
}

void AffineExpFlow::pull_vjp(ConstSpan u, ConstSpan, ConstSpan g_z, double g_logdet,
                             ParamVector& grad) const {
  const double l = lambda();
  const double z = (u[0] - c0_ * l - c1_) * std::exp(-l);
  const double dz_dl = -(c0_ * std::exp(-l) + z);
  grad.seg("theta")[0] += g_z[0] * dz_dl + g_logdet * (-1.0);
}

namespace {

std::string fmt_err(double err) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << err;
  return os.str();
}

FlowConfig small_flow_config(int control_dim, int horizon, int context_dim, bool sigmoid,
                             std::uint64_t seed) {
  FlowConfig cfg;
  cfg.control_dim = control_dim;
  cfg.horizon = horizon;
  cfg.context_dim = context_dim;
  cfg.num_blocks = 3;
  cfg.hidden_width = 8;
  cfg.hidden_layers = 1;
  cfg.layer_norm = true;
  cfg.sigmoid_layer = sigmoid;
  cfg.lower = Vec(control_dim, -2.0);
  cfg.upper = Vec(control_dim, 2.0);
  cfg.init_seed = seed;
  return cfg;
}

void randomize(ParamVector& params, Rng& rng, double scale) {
  for (double& v : params.values()) v = rng.uniform(-scale, scale);
}

Vec random_vec(std::size_t n, Rng& rng, double lo, double hi) {
  Vec v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace

CheckResult gradient_suite() {
  constexpr double kTol = 1e-5;
  double worst = 0.0;
  std::string where = "none";
  auto note = [&](double err, const std::string& name) {
    if (err > worst) {
      worst = err;
      where = name;
    }
  };

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(1000 + seed);

    {  // dense network with mixed activations and layer norm
      NetworkSpec spec = NetworkSpec::mlp({5, 8, 7, 4},
                                          {Activation::kTanh, Activation::kRelu,
                                           Activation::kIdentity},
                                          {true, false, false});
      ParamVector params;
      mlp_init(params, "net", spec, rng, /*zero_final_layer=*/false);
      const Vec x = random_vec(5, rng, -1.5, 1.5);
      const Vec g = random_vec(4, rng, -1.0, 1.0);
      GradientRecord rec = mlp_backward(params, "net", spec, x, g);
      Vec fd = finite_diff_params(
          params, [&] { return dot(g, mlp_apply(params, "net", spec, x)); });
      note(max_rel_err(rec.grads.values(), fd, 1e-2), "mlp params");

      // input gradient against finite differences
      Vec xi(x);
      Vec fd_in(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double h = 1e-6 * std::max(1.0, std::abs(x[i]));
        xi[i] = x[i] + h;
        const double fp = dot(g, mlp_apply(params, "net", spec, xi));
        xi[i] = x[i] - h;
        const double fm = dot(g, mlp_apply(params, "net", spec, xi));
        xi[i] = x[i];
        fd_in[i] = (fp - fm) / (2.0 * h);
      }
      note(max_rel_err(rec.input_grad, fd_in, 1e-2), "mlp input");
    }

    {  // layer norm on its own
      const std::size_t n = 6;
      const Vec x = random_vec(n, rng, -2.0, 2.0);
      const Vec gain = random_vec(n, rng, 0.5, 1.5);
      const Vec up = random_vec(n, rng, -1.0, 1.0);
      ParamVector aux;
      aux.add_segment("g", n);
      aux.add_segment("b", n);
      Span gg = aux.seg("g");
      Span gb = aux.seg("b");
      Vec bias(n, 0.0);
      Vec dx = layer_norm_backward(x, gain, up, gg, gb);
      Vec xi(x);
      for (std::size_t i = 0; i < n; ++i) {
        const double h = 1e-6 * std::max(1.0, std::abs(x[i]));
        xi[i] = x[i] + h;
        const double fp = dot(up, layer_norm_apply(xi, gain, bias));
        xi[i] = x[i] - h;
        const double fm = dot(up, layer_norm_apply(xi, gain, bias));
        xi[i] = x[i];
        note(rel_err(dx[i], (fp - fm) / (2.0 * h), 1e-2), "layer norm input");
      }
    }

    {  // LSTM cell: parameter, input and state gradients
      LstmSpec spec{4, 6};
      ParamVector params;
      lstm_init(params, "cell", spec, rng);
      LstmState state{random_vec(6, rng, -1.0, 1.0), random_vec(6, rng, -1.0, 1.0)};
      const Vec x = random_vec(4, rng, -1.0, 1.0);
      const Vec gh = random_vec(6, rng, -1.0, 1.0);
      const Vec gc = random_vec(6, rng, -1.0, 1.0);
      ParamVector grad = params.zeros_like();
      lstm_backward(params, "cell", spec, state, x, gh, gc, grad);
      auto objective = [&] {
        LstmState next = lstm_step(params, "cell", spec, state, x);
        return dot(gh, next.h) + dot(gc, next.c);
      };
      Vec fd = finite_diff_params(params, objective);
      note(max_rel_err(grad.values(), fd, 1e-2), "lstm params");
    }

    {  // flow log-likelihood gradient through pull + log-det
      FlowConfig fc = small_flow_config(2, 2, 3, true, 900 + seed);
      FlowModel flow(fc);
      randomize(flow.params(), rng, 0.4);
      const Vec c = random_vec(3, rng, -1.0, 1.0);
      const Vec z = random_vec(4, rng, -1.0, 1.0);
      const Vec u = flow.push(z, c).output;
      const Vec mean = random_vec(4, rng, -0.5, 0.5);
      const Vec var = random_vec(4, rng, 0.5, 2.0);
      ParamVector grad = flow.params().zeros_like();
      log_likelihood_grad(flow, mean, var, u, c, grad);
      Vec fd = finite_diff_params(flow.params(),
                                  [&] { return log_likelihood(flow, mean, var, u, c); });
      note(max_rel_err(grad.values(), fd, 1e-2), "flow log-likelihood");
    }
  }

  CheckResult res;
  res.name = "gradient suite (dense, layer norm, LSTM, flow log-likelihood)";
  res.passed = worst <= kTol;
  res.detail = "max relative error " + fmt_err(worst) + " in " + where;
  return res;
}

CheckResult flow_exactness() {
  double worst_rt = 0.0, worst_anti = 0.0, worst_jac = 0.0;
  int bound_violations = 0;

  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    FlowConfig fc = small_flow_config(2, 3, 2, trial % 2 == 0, 70 + trial);
    FlowModel flow(fc);
    randomize(flow.params(), rng, 0.4);
    const Vec c = random_vec(2, rng, -1.0, 1.0);
    const Vec z = random_vec(fc.dim(), rng, -2.0, 2.0);
    const FlowEval fwd = flow.push(z, c);
    const FlowEval back = flow.pull(fwd.output, c);
    for (int d = 0; d < fc.dim(); ++d)
      worst_rt = std::max(worst_rt, std::abs(back.output[d] - z[d]));
    worst_anti = std::max(worst_anti, std::abs(fwd.log_det + back.log_det));
  }

  // composed log-det against a dense finite-difference Jacobian, dims 2..6
  for (int dim = 2; dim <= 6; ++dim) {
    Rng rng2(40 + dim);
    FlowConfig fc = small_flow_config(1, dim, 0, true, 50 + dim);
    FlowModel flow(fc);
    randomize(flow.params(), rng2, 0.4);
    const Vec z = random_vec(dim, rng2, -1.5, 1.5);
    Eigen::MatrixXd J(dim, dim);
    Vec zi(z);
    for (int j = 0; j < dim; ++j) {
      const double h = 1e-6 * std::max(1.0, std::abs(z[j]));
      zi[j] = z[j] + h;
      const Vec up = flow.push(zi, {}).output;
      zi[j] = z[j] - h;
      const Vec dn = flow.push(zi, {}).output;
      zi[j] = z[j];
      for (int i = 0; i < dim; ++i) J(i, j) = (up[i] - dn[i]) / (2.0 * h);
    }
    const double log_det_fd = std::log(std::abs(J.determinant()));
    const double log_det = flow.push(z, {}).log_det;
    worst_jac = std::max(worst_jac, rel_err(log_det, log_det_fd, 1e-2));
  }

  {  // constraint satisfaction over 1e4 pushed samples
    FlowConfig fc = small_flow_config(2, 4, 0, true, 99);
    FlowModel flow(fc);
    Rng rng3(99);
    randomize(flow.params(), rng3, 0.5);
    for (int i = 0; i < 10000; ++i) {
      const Vec z = random_vec(fc.dim(), rng3, -4.0, 4.0);
      const Vec u = flow.push(z, {}).output;
      for (int d = 0; d < fc.dim(); ++d) {
        const int m = d % fc.control_dim;
        if (!(u[d] > fc.lower[m] && u[d] < fc.upper[m])) ++bound_violations;
      }
    }
  }

  CheckResult res;
  res.name = "flow exactness (round trip, log-det antisymmetry, Jacobian, bounds)";
  res.passed = worst_rt <= 1e-9 && worst_anti <= 1e-9 && worst_jac <= 1e-5 &&
               bound_violations == 0;
  res.detail = "round trip " + fmt_err(worst_rt) + ", antisymmetry " + fmt_err(worst_anti) +
               ", jacobian " + fmt_err(worst_jac) + ", bound violations " +
               std::to_string(bound_violations);
  return res;
}

CheckResult latent_equivalence() {
  double worst_traj = 0.0, worst_sum = 0.0;

  // identity-flow NFMPC against Gaussian MPPI on the same Halton stream
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    EnvGenParams params;
    params.obstacle_count = 4;
    EnvContext env = generate_env(EnvKind::kRandom, 4200 + seed, params);
    CostWeights costs;

    ControllerConfig base;
    base.control_dim = 2;
    base.horizon = 8;
    base.samples = 16;
    base.temperature = 1e-32;
    base.step_size = 0.7;
    base.init_cov = 1.0;
    base.latent_cov = 1.0;
    base.adapt_covariance = false;
    base.shift = "identity";
    base.conditional = false;

    IdentityBijection identity(base.dim());
    ControllerConfig nf = base;
    nf.kind = "nfmpc";
    NfmpcController nfmpc(nf, identity, nullptr, default_cost_fn(costs));
    ControllerConfig mp = base;
    mp.kind = "mppi";
    MppiController mppi(mp, default_cost_fn(costs));

    EpisodeRecord a = run_eval_episode(nfmpc, env, costs, 50, 4200 + seed);
    EpisodeRecord b = run_eval_episode(mppi, env, costs, 50, 4200 + seed);
    for (std::size_t t = 0; t < a.trajectory.size(); ++t) {
      worst_traj = std::max({worst_traj, std::abs(a.trajectory[t].px - b.trajectory[t].px),
                             std::abs(a.trajectory[t].py - b.trajectory[t].py),
                             std::abs(a.trajectory[t].vx - b.trajectory[t].vx),
                             std::abs(a.trajectory[t].vy - b.trajectory[t].vy)});
    }
  }

  // sum_i w_i z_i == sum_i w_i pull(u_i) for arbitrary flows
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    FlowConfig fc = small_flow_config(2, 3, 2, true, 300 + trial);
    FlowModel flow(fc);
    randomize(flow.params(), rng, 0.4);
    const Vec c = random_vec(2, rng, -1.0, 1.0);
    const int n = 8;
    std::vector<Vec> latents, pulled;
    Vec costs(n);
    for (int i = 0; i < n; ++i) {
      latents.push_back(random_vec(fc.dim(), rng, -2.0, 2.0));
      pulled.push_back(flow.pull(flow.push(latents.back(), c).output, c).output);
      costs[i] = rng.uniform(0.0, 10.0);
    }
    const Vec w = softmax_weights(costs, 0.5);
    Vec sum_z(fc.dim(), 0.0), sum_pull(fc.dim(), 0.0);
    for (int i = 0; i < n; ++i) {
      axpy(w[i], latents[i], sum_z);
      axpy(w[i], pulled[i], sum_pull);
    }
    for (int d = 0; d < fc.dim(); ++d)
      worst_sum = std::max(worst_sum, std::abs(sum_z[d] - sum_pull[d]));
  }

  CheckResult res;
  res.name = "latent update equivalence (identity-flow NFMPC == Gaussian MPPI)";
  res.passed = worst_traj <= 1e-9 && worst_sum <= 1e-9;
  res.detail = "trajectory diff " + fmt_err(worst_traj) + ", weighted-sum identity " +
               fmt_err(worst_sum);
  return res;
}

namespace {

struct OracleInstance {
  double lambda0, c0, c1;       // flow family
  double mu, var, beta;         // latent Gaussian and temperature
  double k0, k1, k2, k3;        // cost C(u) = k0 (u-k1)^2 + k2 cos(k3 u)
};

double oracle_cost(const OracleInstance& inst, double u) {
  return inst.k0 * (u - inst.k1) * (u - inst.k1) + inst.k2 * std::cos(inst.k3 * u);
}

// Eq.-12 ratio by dense quadrature over the latent axis, as a function of the
// flow parameter.
double quad_delta_mu(const OracleInstance& inst, double lambda) {
  const int nodes = 2001;
  const double sigma = std::sqrt(inst.var);
  const double lo = inst.mu - 8.0 * sigma, hi = inst.mu + 8.0 * sigma;
  const double dz = (hi - lo) / (nodes - 1);
  double num = 0.0, den = 0.0;
  for (int k = 0; k < nodes; ++k) {
    const double z = lo + k * dz;
    const double u = std::exp(lambda) * z + inst.c0 * lambda + inst.c1;
    const double p = std::exp(-0.5 * (z - inst.mu) * (z - inst.mu) / inst.var);
    const double q = p * std::exp(-oracle_cost(inst, u) / inst.beta);
    const double trap = (k == 0 || k == nodes - 1) ? 0.5 : 1.0;
    num += trap * q * z;
    den += trap * q;
  }
  return num / den;
}

}  // namespace

CheckResult update_gradient_oracle() {
  double worst = 0.0;
  Rng rng(2024);
  for (int trial = 0; trial < 10; ++trial) {
    OracleInstance inst;
    inst.lambda0 = rng.uniform(-0.4, 0.4);
    inst.c0 = rng.uniform(-0.5, 0.5);
    inst.c1 = rng.uniform(-0.5, 0.5);
    inst.mu = rng.uniform(-0.5, 0.5);
    inst.var = rng.uniform(0.5, 1.5);
    inst.beta = rng.uniform(0.5, 2.0);
    inst.k0 = rng.uniform(0.2, 1.0);
    inst.k1 = rng.uniform(-1.0, 1.0);
    inst.k2 = rng.uniform(0.0, 0.5);
    inst.k3 = rng.uniform(0.5, 2.0);

    // quadrature-weighted batch at lambda0
    AffineExpFlow flow(inst.lambda0, inst.c0, inst.c1);
    const int nodes = 2001;
    const double sigma = std::sqrt(inst.var);
    const double lo = inst.mu - 8.0 * sigma, hi = inst.mu + 8.0 * sigma;
    const double dz = (hi - lo) / (nodes - 1);
    SampleBatch batch;
    double wsum = 0.0;
    for (int k = 0; k < nodes; ++k) {
      const double z = lo + k * dz;
      const Vec u = flow.push(Vec{z}, {}).output;
      const double p = std::exp(-0.5 * (z - inst.mu) * (z - inst.mu) / inst.var);
      const double trap = (k == 0 || k == nodes - 1) ? 0.5 : 1.0;
      const double w = trap * p * std::exp(-oracle_cost(inst, u[0]) / inst.beta);
      batch.latents.push_back(Vec{z});
      batch.controls.push_back(u);
      batch.weights.push_back(w);
      wsum += w;
    }
    for (double& w : batch.weights) w /= wsum;
    batch.costs.assign(batch.weights.size(), 0.0);

    const Vec mean{inst.mu};
    const Vec var{inst.var};
    ParamVector grad = flow.params().zeros_like();
    delta_mu_vjp(batch, flow, mean, var, {}, Vec{1.0}, grad);
    const double analytic = grad.seg("theta")[0];

    const double h = 1e-5;
    const double fd =
        (quad_delta_mu(inst, inst.lambda0 + h) - quad_delta_mu(inst, inst.lambda0 - h)) /
        (2.0 * h);
    worst = std::max(worst, rel_err(analytic, fd, 1e-2));
  }

  CheckResult res;
  res.name = "approximate update gradient (quadrature M1 - M2*M3 oracle)";
  res.passed = worst <= 1e-5;
  res.detail = "max relative error " + fmt_err(worst) + " over 10 instances";
  return res;
}

CheckResult sigmoid_logdet_values() {
  double worst = 0.0;
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const double lo = rng.uniform(-3.0, 0.0), hi = rng.uniform(0.5, 3.0);
    SigmoidLayer layer{{lo}, {hi}};
    {  // forward direction
      const double x = rng.uniform(-4.0, 4.0);
      const double h = 1e-6 * std::max(1.0, std::abs(x));
      const double up = sigmoid_forward(layer, Vec{x + h}).output[0];
      const double dn = sigmoid_forward(layer, Vec{x - h}).output[0];
      const double fd = std::log((up - dn) / (2.0 * h));
      worst = std::max(worst, std::abs(sigmoid_forward(layer, Vec{x}).log_det - fd));
    }
    {  // inverse direction, strictly inside the bounds
      const double w = hi - lo;
      const double u = lo + w * rng.uniform(0.05, 0.95);
      const double h = 1e-8 * w;
      const double up = sigmoid_inverse(layer, Vec{u + h}).output[0];
      const double dn = sigmoid_inverse(layer, Vec{u - h}).output[0];
      const double fd = std::log((up - dn) / (2.0 * h));
      worst = std::max(worst, std::abs(sigmoid_inverse(layer, Vec{u}).log_det - fd));
    }
  }

  SigmoidLayer unit{{0.0}, {1.0}};
  const double at_zero = sigmoid_forward(unit, Vec{0.0}).log_det;
  const double exact = std::abs(at_zero - std::log(0.25));

  CheckResult res;
  res.name = "sigmoid layer log-determinants (forward/inverse, exact value at 0)";
  res.passed = worst <= 1e-7 && exact <= 1e-15;
  res.detail = "max |logdet - fd| " + fmt_err(worst) + ", |logdet(0) - log(1/4)| " +
               fmt_err(exact);
  return res;
}

CheckResult weight_properties() {
  double worst_sum = 0.0, worst_shift = 0.0;
  int argmin_failures = 0;
  Rng rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform(0.0, 62.0));
    Vec costs = random_vec(n, rng, 0.0, 100.0);
    const double beta = std::pow(10.0, rng.uniform(-32.0, 0.0));
    const Vec w = softmax_weights(costs, beta);

    double sum = 0.0;
    for (double x : w) sum += x;
    worst_sum = std::max(worst_sum, std::abs(sum - 1.0));

    const double k = rng.uniform(-50.0, 50.0);
    Vec shifted(costs);
    for (double& c : shifted) c += k;
    const Vec w2 = softmax_weights(shifted, beta);
    for (int i = 0; i < n; ++i) worst_shift = std::max(worst_shift, std::abs(w[i] - w2[i]));

    const auto argmin =
        std::distance(costs.begin(), std::min_element(costs.begin(), costs.end()));
    const double wmax = *std::max_element(w.begin(), w.end());
    if (w[argmin] < wmax - 1e-15) ++argmin_failures;
  }

  CheckResult res;
  res.name = "softmax weight properties (sum, shift invariance, argmin dominance)";
  res.passed = worst_sum <= 1e-12 && worst_shift <= 1e-12 && argmin_failures == 0;
  res.detail = "sum error " + fmt_err(worst_sum) + ", shift error " + fmt_err(worst_shift) +
               ", argmin failures " + std::to_string(argmin_failures);
  return res;
}

CheckResult eval_determinism(const std::string& scratch_dir) {
  namespace fs = std::filesystem;
  const fs::path base(scratch_dir);
  fs::create_directories(base);

  FlowConfig fc = small_flow_config(2, 8, 0, true, 31);
  fc.lower = Vec(2, -kControlLimit);
  fc.upper = Vec(2, kControlLimit);
  FlowModel flow(fc);
  Rng rng(31);
  randomize(flow.params(), rng, 0.2);
  const std::string flow_path = (base / "determinism_flow.ckpt").string();
  flow.save(flow_path);
  ShiftModel shift(ShiftVariant::kLearnedMlp, fc.dim(), 2, 16, 31);
  const std::string shift_path = (base / "determinism_shift.ckpt").string();
  shift.save(shift_path);

  ExperimentConfig cfg;
  cfg.controllers = {"mppi", "nfmpc"};
  cfg.env_kind = "random";
  cfg.sample_counts = {8};
  cfg.episodes = 2;
  cfg.episode_length = 25;
  cfg.seed = 123;
  cfg.flow_checkpoint = flow_path;
  cfg.shift_checkpoint = shift_path;
  cfg.controller.horizon = 8;
  cfg.controller.conditional = false;
  cfg.env.obstacle_count = 4;

  std::string first, second;
  for (int run = 0; run < 2; ++run) {
    const std::string dir = (base / ("determinism_run" + std::to_string(run))).string();
    ExperimentOutput out = run_experiment(cfg);
    emit_outputs(out, cfg, dir);
    std::ifstream f(fs::path(dir) / "episodes.jsonl", std::ios::binary);
    std::ostringstream buf;
    buf << f.rdbuf();
    (run == 0 ? first : second) = buf.str();
  }

  CheckResult res;
  res.name = "eval determinism (byte-identical episodes.jsonl)";
  res.passed = !first.empty() && first == second;
  res.detail = res.passed ? "identical across repeated runs" : "episodes.jsonl differs";
  return res;
}

std::vector<CheckResult> run_fast_suite(const std::string& scratch_dir) {
  std::vector<CheckResult> results;
  results.push_back(gradient_suite());
  results.push_back(flow_exactness());
  results.push_back(latent_equivalence());
  results.push_back(update_gradient_oracle());
  results.push_back(sigmoid_logdet_values());
  results.push_back(weight_properties());
  results.push_back(eval_determinism(scratch_dir));
  return results;
}

}  // namespace nfmpc::verify
