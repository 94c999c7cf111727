#include <doctest.h>

#include <cmath>

#include <Eigen/Dense>

#include "nfmpc/controller.hpp"
#include "nfmpc/verify.hpp"

using namespace nfmpc;

namespace {

Vec random_vec(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Vec v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace

TEST_CASE("softmax weights: symmetry, shift invariance, hand value") {
  const Vec equal = softmax_weights(Vec{5.0, 5.0}, 1.0);
  CHECK(equal[0] == doctest::Approx(0.5));
  CHECK(equal[1] == doctest::Approx(0.5));

  const Vec w = softmax_weights(Vec{0.0, 100.0}, 1.0);
  const double z = 1.0 + std::exp(-1.0);
  CHECK(w[0] == doctest::Approx(1.0 / z).epsilon(1e-12));       // ~0.7311
  CHECK(w[1] == doctest::Approx(std::exp(-1.0) / z).epsilon(1e-12));  // ~0.2689

  const Vec shifted = softmax_weights(Vec{123.0, 223.0}, 1.0);
  CHECK(std::abs(w[0] - shifted[0]) <= 1e-12);
  CHECK(std::abs(w[1] - shifted[1]) <= 1e-12);

  CHECK_THROWS_AS(softmax_weights(Vec{}, 1.0), std::invalid_argument);
}

TEST_CASE("mean update honors the step size") {
  SampleBatch batch;
  batch.controls = {{1.0, 0.0}, {3.0, 2.0}};
  batch.weights = {0.5, 0.5};
  const Vec prev{10.0, 10.0};

  const Vec frozen = mppi_control_update(prev, batch, 0.0);
  CHECK(frozen == prev);

  const Vec full = mppi_control_update(prev, batch, 1.0);
  CHECK(full[0] == doctest::Approx(2.0));
  CHECK(full[1] == doctest::Approx(1.0));

  SampleBatch two;
  two.controls = {{1.0}, {5.0}};
  two.weights = {0.25, 0.75};
  const Vec blended = mppi_control_update(Vec{2.0}, two, 0.7);
  // 0.3*2 + 0.7*(0.25*1 + 0.75*5) = 0.6 + 0.7*4 = 3.4
  CHECK(blended[0] == doctest::Approx(3.4).epsilon(1e-14));
}

TEST_CASE("latent update equals the control update under the identity flow") {
  Rng rng(5);
  SampleBatch batch;
  for (int i = 0; i < 6; ++i) {
    batch.latents.push_back(random_vec(4, rng));
    batch.controls.push_back(batch.latents.back());  // identity flow
  }
  batch.weights = softmax_weights(random_vec(6, rng, 0.0, 5.0), 0.7);
  const Vec prev = random_vec(4, rng);
  const Vec a = mppi_latent_update(prev, batch, 0.6);
  const Vec b = mppi_control_update(prev, batch, 0.6);
  for (int d = 0; d < 4; ++d) CHECK(std::abs(a[d] - b[d]) <= 1e-12);

  SampleBatch single;
  single.latents = {{2.5, -1.0}};
  single.controls = {{0.0, 0.0}};
  single.weights = {1.0};
  const Vec full = mppi_latent_update(Vec{9.0, 9.0}, single, 1.0);
  CHECK(full[0] == 2.5);
  CHECK(full[1] == -1.0);
}

TEST_CASE("latent update ratio matches a dense change-of-variables oracle in 1-D") {
  // sigmoid-terminated 1-D flow; Eq. 12's ratio computed on a latent grid and
  // on a control grid must agree
  FlowConfig fc;
  fc.control_dim = 1;
  fc.horizon = 1;
  fc.num_blocks = 0;
  fc.sigmoid_layer = true;
  fc.lower = {-2.0};
  fc.upper = {3.0};
  FlowModel flow(fc);

  const double mu = 0.4, var = 1.2, beta = 1.0;
  auto cost = [](double u) { return (u - 0.5) * (u - 0.5); };

  double num_z = 0.0, den_z = 0.0;
  const int nz = 4001;
  const double zlo = mu - 8.0 * std::sqrt(var), zhi = mu + 8.0 * std::sqrt(var);
  for (int k = 0; k < nz; ++k) {
    const double z = zlo + (zhi - zlo) * k / (nz - 1);
    const double u = flow.push(Vec{z}, {}).output[0];
    const double q = std::exp(-0.5 * (z - mu) * (z - mu) / var) * std::exp(-cost(u) / beta);
    const double trap = (k == 0 || k == nz - 1) ? 0.5 : 1.0;
    num_z += trap * q * z;
    den_z += trap * q;
  }
  const double ratio_z = num_z / den_z;

  double num_u = 0.0, den_u = 0.0;
  const int nu = 200001;
  const double ulo = -2.0 + 1e-9, uhi = 3.0 - 1e-9;
  for (int k = 0; k < nu; ++k) {
    const double u = ulo + (uhi - ulo) * k / (nu - 1);
    const FlowEval pull = flow.pull(Vec{u}, {});
    const double pi_u =
        std::exp(gaussian_log_density(pull.output, Vec{mu}, Vec{var}) + pull.log_det);
    const double q = pi_u * std::exp(-cost(u) / beta);
    const double trap = (k == 0 || k == nu - 1) ? 0.5 : 1.0;
    num_u += trap * q * pull.output[0];
    den_u += trap * q;
  }
  const double ratio_u = num_u / den_u;
  CHECK(ratio_z == doctest::Approx(ratio_u).epsilon(1e-5));
}

TEST_CASE("covariance adaptation: fixed point, hand case, SPD") {
  Rng rng(9);
  const int d = 3;
  Eigen::MatrixXd prev = 2.0 * Eigen::MatrixXd::Identity(d, d);

  SampleBatch batch;
  const Vec mu{1.0, -1.0, 0.5};
  const Vec a{0.3, 0.7, -0.2};
  batch.controls = {{mu[0] + a[0], mu[1] + a[1], mu[2] + a[2]},
                    {mu[0] - a[0], mu[1] - a[1], mu[2] - a[2]}};
  batch.weights = {0.5, 0.5};

  CHECK(covariance_adapt(prev, batch, mu, 0.0) == prev);

  const Eigen::MatrixXd adapted = covariance_adapt(prev, batch, mu, 1.0);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      CHECK(adapted(i, j) == doctest::Approx(a[i] * a[j] + (i == j ? 1e-8 : 0.0)).epsilon(1e-12));

  for (int trial = 0; trial < 100; ++trial) {
    SampleBatch rb;
    const int n = 2 + static_cast<int>(rng.uniform(0.0, 6.0));
    for (int i = 0; i < n; ++i) rb.controls.push_back(random_vec(d, rng, -2.0, 2.0));
    rb.weights = softmax_weights(random_vec(n, rng, 0.0, 3.0), 0.5);
    const Vec mean = random_vec(d, rng);
    prev = covariance_adapt(prev, rb, mean, rng.uniform(0.1, 1.0));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(prev);
    CHECK(eig.eigenvalues().minCoeff() > 0.0);
  }
}

TEST_CASE("updated mean stays in the convex hull of previous mean and samples") {
  Rng rng(33);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform(0.0, 6.0));
    SampleBatch batch;
    for (int i = 0; i < n; ++i) batch.controls.push_back(random_vec(3, rng, -2.0, 2.0));
    batch.weights = softmax_weights(random_vec(n, rng, 0.0, 5.0), rng.uniform(0.01, 1.0));
    const Vec prev = random_vec(3, rng, -2.0, 2.0);
    const double gamma = rng.uniform(0.0, 1.0);
    const Vec updated = mppi_control_update(prev, batch, gamma);
    for (int d = 0; d < 3; ++d) {
      double lo = prev[d], hi = prev[d];
      for (const Vec& u : batch.controls) {
        lo = std::min(lo, u[d]);
        hi = std::max(hi, u[d]);
      }
      CHECK(updated[d] >= lo - 1e-12);
      CHECK(updated[d] <= hi + 1e-12);
    }
  }
}

TEST_CASE("standard-shift initialization reproduces the time advance exactly") {
  Rng rng(44);
  ShiftModel shift(ShiftVariant::kLearnedMlp, 8, 2, 16, 0, ShiftInit::kStandardShift);
  for (int trial = 0; trial < 20; ++trial) {
    const Vec mu = random_vec(8, rng, -3.0, 3.0);
    const ShiftEval ev = shift.apply(mu, {});
    const Vec expected = shift_standard(mu, 2);
    for (int d = 0; d < 8; ++d) CHECK(ev.mean[d] == doctest::Approx(expected[d]).epsilon(1e-15));
  }
  CHECK_THROWS_AS(ShiftModel(ShiftVariant::kLearnedMlp, 8, 2, 12, 0, ShiftInit::kStandardShift),
                  ConfigError);
}

TEST_CASE("standard shift drops the first control and appends zeros") {
  const Vec mean{1.0, 2.0, 3.0, 4.0, 5.0, 6.0};  // H=3, M=2
  const Vec shifted = shift_standard(mean, 2);
  CHECK(shifted == Vec{3.0, 4.0, 5.0, 6.0, 0.0, 0.0});

  const Vec zeros(6, 0.0);
  CHECK(shift_standard(zeros, 2) == zeros);

  Vec seq = mean;
  for (int i = 0; i < 3; ++i) seq = shift_standard(seq, 2);
  CHECK(seq == zeros);
}

TEST_CASE("learned shift variants") {
  ShiftModel mlp(ShiftVariant::kLearnedMlp, 4, 2, 8, 3);
  for (double& v : mlp.params().values()) v = 0.0;
  const ShiftEval zero_out = mlp.apply(Vec{1.0, 2.0, 3.0, 4.0}, {});
  for (double v : zero_out.mean) CHECK(v == 0.0);

  ShiftModel identity(ShiftVariant::kIdentity, 4, 2, 0, 0);
  const Vec mu{0.5, -0.5, 1.5, 2.5};
  CHECK(identity.apply(mu, {}).mean == mu);

  // parameter gradients, MLP variant
  Rng rng(12);
  ShiftModel learned(ShiftVariant::kLearnedMlp, 3, 1, 6, 12);
  for (double& v : learned.params().values()) v = rng.uniform(-0.5, 0.5);
  const Vec x = random_vec(3, rng);
  const Vec g = random_vec(3, rng);
  ParamVector grad = learned.params().zeros_like();
  learned.backward(x, {}, g, {}, grad);
  const Vec fd = verify::finite_diff_params(learned.params(),
                                            [&] { return dot(g, learned.apply(x, {}).mean); });
  CHECK(verify::max_rel_err(grad.values(), fd) <= 1e-5);

  // LSTM variant including the recurrent-state path
  ShiftModel lstm(ShiftVariant::kLearnedLstm, 3, 1, 5, 21);
  for (double& v : lstm.params().values()) v = rng.uniform(-0.5, 0.5);
  LstmState state{random_vec(5, rng), random_vec(5, rng)};
  const Vec gm = random_vec(3, rng);
  LstmState gs{random_vec(5, rng), random_vec(5, rng)};
  ParamVector lgrad = lstm.params().zeros_like();
  lstm.backward(x, state, gm, gs, lgrad);
  const Vec lfd = verify::finite_diff_params(lstm.params(), [&] {
    const ShiftEval ev = lstm.apply(x, state);
    return dot(gm, ev.mean) + dot(gs.h, ev.state.h) + dot(gs.c, ev.state.c);
  });
  CHECK(verify::max_rel_err(lgrad.values(), lfd) <= 1e-5);
}

TEST_CASE("select_action pushes the mean and respects the bounds") {
  IdentityBijection identity(6);
  const Vec mean{0.5, -0.25, 9.0, 9.0, 9.0, 9.0};
  const Vec var(6, 1.0);
  const Vec action = select_action(identity, mean, var, {}, 2, true, nullptr);
  REQUIRE(action.size() == 2);
  CHECK(action[0] == 0.5);
  CHECK(action[1] == -0.25);

  FlowConfig fc;
  fc.control_dim = 2;
  fc.horizon = 2;
  fc.num_blocks = 2;
  fc.hidden_width = 8;
  fc.sigmoid_layer = true;
  fc.lower = Vec{-10.0, -10.0};
  fc.upper = Vec{10.0, 10.0};
  FlowModel flow(fc);
  Rng rng(3);
  for (double& v : flow.params().values()) v = rng.uniform(-0.3, 0.3);
  for (int i = 0; i < 10000; ++i) {
    const Vec mu = random_vec(4, rng, -30.0, 30.0);
    const Vec a = select_action(flow, mu, Vec(4, 1.0), {}, 2, true, nullptr);
    CHECK(a[0] >= -10.0);
    CHECK(a[0] <= 10.0);
  }

  Rng s1(42), s2(42);
  const Vec r1 = select_action(identity, mean, var, {}, 2, false, &s1);
  const Vec r2 = select_action(identity, mean, var, {}, 2, false, &s2);
  CHECK(r1 == r2);
}

namespace {

CostEvalFn quadratic_cost(const Vec& target) {
  return [target](const PlanarState&, ConstSpan controls, const EnvContext&) {
    double c = 0.0;
    for (std::size_t i = 0; i < controls.size(); ++i)
      c += (controls[i] - target[i]) * (controls[i] - target[i]);
    return c;
  };
}

}  // namespace

TEST_CASE("warm start with one iteration equals a single update") {
  EnvContext ctx;
  ControllerConfig cfg;
  cfg.kind = "nfmpc";
  cfg.control_dim = 2;
  cfg.horizon = 2;
  cfg.samples = 32;
  cfg.conditional = false;
  IdentityBijection identity(4);
  const Vec target{0.3, -0.4, 0.2, 0.1};

  NfmpcController warm(cfg, identity, nullptr, quadratic_cost(target));
  warm.reset(ctx, ctx.start, 0);
  warm.warm_start(ctx.start, ctx, 1);

  NfmpcController plain(cfg, identity, nullptr, quadratic_cost(target));
  plain.reset(ctx, ctx.start, 0);
  plain.plan(ctx.start, ctx, nullptr, nullptr);

  CHECK(warm.theta().mean == plain.theta().mean);
}

TEST_CASE("warm start converges to the quadratic minimizer") {
  EnvContext ctx;
  ControllerConfig cfg;
  cfg.kind = "nfmpc";
  cfg.control_dim = 2;
  cfg.horizon = 2;
  cfg.samples = 1024;
  cfg.temperature = 0.05;
  cfg.step_size = 0.7;
  cfg.conditional = false;
  IdentityBijection identity(4);
  Rng rng(8);
  const Vec target = random_vec(4, rng, -0.8, 0.8);

  NfmpcController controller(cfg, identity, nullptr, quadratic_cost(target));
  controller.reset(ctx, ctx.start, 0);
  controller.warm_start(ctx.start, ctx, 100);
  for (int d = 0; d < 4; ++d) CHECK(std::abs(controller.theta().mean[d] - target[d]) <= 1e-2);

  NfmpcController again(cfg, identity, nullptr, quadratic_cost(target));
  again.reset(ctx, ctx.start, 0);
  again.warm_start(ctx.start, ctx, 100);
  CHECK(again.theta().mean == controller.theta().mean);  // deterministic
}

TEST_CASE("flowmppi requires an even sample count and honors the penalty switch") {
  FlowConfig fc;
  fc.control_dim = 2;
  fc.horizon = 2;
  fc.num_blocks = 2;
  fc.hidden_width = 8;
  fc.sigmoid_layer = true;
  fc.lower = Vec{-10.0, -10.0};
  fc.upper = Vec{10.0, 10.0};
  FlowModel flow(fc);

  ControllerConfig cfg;
  cfg.kind = "flowmppi";
  cfg.control_dim = 2;
  cfg.horizon = 2;
  cfg.samples = 7;
  cfg.conditional = false;
  CostWeights weights;
  CHECK_THROWS_AS(FlowMppiController(cfg, flow, default_cost_fn(weights)), ConfigError);

  cfg.samples = 8;
  cfg.flow_penalty = 0.0;
  EnvGenParams params;
  params.obstacle_count = 2;
  EnvContext env = generate_env(EnvKind::kRandom, 3, params);
  FlowMppiController controller(cfg, flow, default_cost_fn(weights));
  controller.reset(env, env.start, 3);
  SampleBatch batch;
  controller.plan(env.start, env, nullptr, &batch);
  REQUIRE(batch.size() == 8);
  REQUIRE(batch.latents.size() == 4);  // flow half carries latents
  const CostEvalFn cost = default_cost_fn(weights);
  for (int i = 0; i < 4; ++i)
    CHECK(batch.costs[i] == doctest::Approx(cost(env.start, batch.controls[i], env)));
}
