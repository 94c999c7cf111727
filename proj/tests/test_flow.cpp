#include <doctest.h>

#include <cmath>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "nfmpc/flow.hpp"
#include "nfmpc/verify.hpp"

using namespace nfmpc;

namespace {

Vec random_vec(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Vec v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

FlowConfig tiny_config(int control_dim, int horizon, int context_dim, bool sigmoid,
                       std::uint64_t seed) {
  FlowConfig cfg;
  cfg.control_dim = control_dim;
  cfg.horizon = horizon;
  cfg.context_dim = context_dim;
  cfg.num_blocks = 3;
  cfg.hidden_width = 8;
  cfg.hidden_layers = 1;
  cfg.sigmoid_layer = sigmoid;
  cfg.lower = Vec(control_dim, -2.0);
  cfg.upper = Vec(control_dim, 2.0);
  cfg.init_seed = seed;
  return cfg;
}

void randomize(ParamVector& params, Rng& rng, double scale = 0.4) {
  for (double& v : params.values()) v = rng.uniform(-scale, scale);
}

}  // namespace

TEST_CASE("zero-initialized coupling block is the identity") {
  std::vector<std::uint8_t> mask{1, 0, 1, 0};
  CouplingBlock block = CouplingBlock::make(mask, 0, {6}, true, "blk");
  ParamVector params;
  Rng rng(3);
  mlp_init(params, "blk/s", block.scale_net, rng);  // final layer zeroed
  mlp_init(params, "blk/t", block.trans_net, rng);
  const Vec y{0.3, -1.0, 2.0, 0.5};
  FlowEval ev = coupling_forward(block, params, y, {});
  for (int i = 0; i < 4; ++i) CHECK(ev.output[i] == y[i]);
  CHECK(ev.log_det == 0.0);
}

TEST_CASE("constant scale and translate follow the affine law") {
  // 2 dims, transformed partition = index 1; zero-weight subnets with bias
  std::vector<std::uint8_t> mask{1, 0};
  CouplingBlock block = CouplingBlock::make(mask, 0, {}, false, "blk");
  ParamVector params;
  params.add_segment("blk/s/l0/W", 1, 1);
  params.add_segment("blk/s/l0/b", 1);
  params.add_segment("blk/t/l0/W", 1, 1);
  params.add_segment("blk/t/l0/b", 1);
  params.seg("blk/s/l0/b")[0] = 0.7;   // sigma0
  params.seg("blk/t/l0/b")[0] = -1.3;  // t0
  const Vec y{0.4, 2.0};
  FlowEval ev = coupling_forward(block, params, y, {});
  CHECK(ev.output[0] == 0.4);
  CHECK(ev.output[1] == doctest::Approx(2.0 * std::exp(0.7) - 1.3).epsilon(1e-15));
  CHECK(ev.log_det == doctest::Approx(0.7));

  FlowEval inv = coupling_inverse(block, params, ev.output, {});
  CHECK(inv.output[1] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(inv.log_det == doctest::Approx(-0.7));
}

TEST_CASE("coupling inverse matches a per-coordinate bisection oracle") {
  Rng rng(21);
  std::vector<std::uint8_t> mask{1, 0, 1, 0, 1, 0};
  CouplingBlock block = CouplingBlock::make(mask, 0, {8}, true, "blk");
  ParamVector params;
  mlp_init(params, "blk/s", block.scale_net, rng, false);
  mlp_init(params, "blk/t", block.trans_net, rng, false);
  randomize(params, rng, 0.5);

  const Vec y = random_vec(6, rng, -2.0, 2.0);
  const FlowEval fwd = coupling_forward(block, params, y, {});
  const FlowEval inv = coupling_inverse(block, params, fwd.output, {});

  // forward is monotone per transformed coordinate at fixed pass-through
  for (int idx : block.trans_idx) {
    double lo = -50.0, hi = 50.0;
    for (int iter = 0; iter < 200; ++iter) {
      const double mid = 0.5 * (lo + hi);
      Vec probe(y);
      probe[idx] = mid;
      const double out = coupling_forward(block, params, probe, {}).output[idx];
      (out < fwd.output[idx] ? lo : hi) = mid;
    }
    CHECK(inv.output[idx] == doctest::Approx(0.5 * (lo + hi)).epsilon(1e-7));
  }
  CHECK(fwd.log_det + inv.log_det == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("coupling rejects a context width mismatch") {
  std::vector<std::uint8_t> mask{1, 0};
  CouplingBlock block = CouplingBlock::make(mask, 2, {4}, false, "blk");
  ParamVector params;
  Rng rng(4);
  mlp_init(params, "blk/s", block.scale_net, rng);
  mlp_init(params, "blk/t", block.trans_net, rng);
  CHECK_THROWS_AS(coupling_forward(block, params, Vec{1.0, 2.0}, Vec{0.5}), DimensionError);
}

TEST_CASE("sigmoid forward at zero with unit bounds") {
  SigmoidLayer layer{{0.0}, {1.0}};
  FlowEval ev = sigmoid_forward(layer, Vec{0.0});
  CHECK(ev.output[0] == doctest::Approx(0.5));
  CHECK(ev.log_det == doctest::Approx(std::log(0.25)).epsilon(1e-15));
}

TEST_CASE("sigmoid output stays strictly inside the bounds") {
  SigmoidLayer layer = SigmoidLayer::broadcast(Vec{-10.0, -1.0}, Vec{10.0, 3.0}, 4);
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const Vec x = random_vec(8, rng, -40.0, 40.0);
    const Vec u = sigmoid_forward(layer, x).output;
    for (int d = 0; d < 8; ++d) {
      CHECK(u[d] > layer.lower[d]);
      CHECK(u[d] < layer.upper[d]);
    }
  }
}

TEST_CASE("sigmoid inverse round-trips and rejects out-of-domain input") {
  SigmoidLayer layer{{-3.0}, {5.0}};
  Rng rng(6);
  for (int i = 0; i < 100; ++i) {
    const double x = rng.uniform(-10.0, 10.0);
    const FlowEval fwd = sigmoid_forward(layer, Vec{x});
    const FlowEval inv = sigmoid_inverse(layer, fwd.output);
    CHECK(inv.output[0] == doctest::Approx(x).epsilon(1e-9));
    CHECK(fwd.log_det + inv.log_det == doctest::Approx(0.0).epsilon(1e-9));
  }
  CHECK(sigmoid_inverse(layer, Vec{1.0}).output[0] == doctest::Approx(0.0));
  CHECK_THROWS_AS(sigmoid_inverse(layer, Vec{5.0}), DomainError);
  CHECK_THROWS_AS(sigmoid_inverse(layer, Vec{-3.5}), DomainError);
  CHECK_NOTHROW(sigmoid_inverse(layer, Vec{5.0}, /*tolerant=*/true));
}

TEST_CASE("zero-initialized flow without sigmoid is the identity map") {
  FlowConfig cfg = tiny_config(2, 3, 0, false, 17);
  FlowModel flow(cfg);
  Rng rng(17);
  const Vec z = random_vec(6, rng, -2.0, 2.0);
  FlowEval ev = flow.push(z, {});
  for (int d = 0; d < 6; ++d) CHECK(ev.output[d] == z[d]);
  CHECK(ev.log_det == 0.0);
}

TEST_CASE("flow push/pull round-trip with log-det antisymmetry") {
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    FlowConfig cfg = tiny_config(2, 3, 2, trial % 2 == 0, 40 + trial);
    FlowModel flow(cfg);
    randomize(flow.params(), rng);
    const Vec c = random_vec(2, rng);
    const Vec z = random_vec(6, rng, -2.0, 2.0);
    const FlowEval fwd = flow.push(z, c);
    const FlowEval back = flow.pull(fwd.output, c);
    for (int d = 0; d < 6; ++d) CHECK(back.output[d] == doctest::Approx(z[d]).epsilon(1e-9));
    CHECK(fwd.log_det + back.log_det == doctest::Approx(0.0).epsilon(1e-9));
  }
}

TEST_CASE("log-likelihood of the identity flow at the mean is the Gaussian value") {
  IdentityBijection flow(2);
  const Vec mean{0.0, 0.0};
  const Vec var{1.0, 1.0};
  const double ll = log_likelihood(flow, mean, var, Vec{0.0, 0.0}, {});
  CHECK(ll == doctest::Approx(-std::log(2.0 * M_PI)).epsilon(1e-12));
}

TEST_CASE("1-D flow density integrates to one") {
  FlowConfig cfg;
  cfg.control_dim = 1;
  cfg.horizon = 1;
  cfg.num_blocks = 0;
  cfg.sigmoid_layer = true;
  cfg.lower = {-3.0};
  cfg.upper = {2.0};
  FlowModel flow(cfg);
  const Vec mean{0.3};
  const Vec var{0.8};

  const int n = 200001;
  const double lo = -3.0 + 1e-9, hi = 2.0 - 1e-9;
  const double du = (hi - lo) / (n - 1);
  double integral = 0.0;
  for (int i = 0; i < n; ++i) {
    const double u = lo + i * du;
    const double p = std::exp(log_likelihood(flow, mean, var, Vec{u}, {}));
    integral += (i == 0 || i == n - 1 ? 0.5 : 1.0) * p * du;
  }
  CHECK(integral == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("pull_vjp matches finite differences for a random objective") {
  Rng rng(31);
  FlowConfig cfg = tiny_config(2, 2, 3, true, 31);
  FlowModel flow(cfg);
  randomize(flow.params(), rng);
  const Vec c = random_vec(3, rng);
  const Vec u = flow.push(random_vec(4, rng), c).output;
  const Vec g_z = random_vec(4, rng);
  const double g_ld = rng.uniform(-1.0, 1.0);

  ParamVector grad = flow.params().zeros_like();
  flow.pull_vjp(u, c, g_z, g_ld, grad);
  const Vec fd = verify::finite_diff_params(flow.params(), [&] {
    const FlowEval ev = flow.pull(u, c);
    return dot(g_z, ev.output) + g_ld * ev.log_det;
  });
  CHECK(verify::max_rel_err(grad.values(), fd) <= 1e-5);
}

TEST_CASE("out-of-bounds pull raises a domain error") {
  FlowConfig cfg = tiny_config(2, 2, 0, true, 8);
  FlowModel flow(cfg);
  Vec u(4, 0.0);
  u[2] = 2.5;  // outside (-2, 2)
  CHECK_THROWS_AS(flow.pull(u, {}), DomainError);
}

TEST_CASE("flow checkpoints restore configuration and parameters") {
  Rng rng(55);
  FlowConfig cfg = tiny_config(2, 4, 3, true, 55);
  FlowModel flow(cfg);
  randomize(flow.params(), rng);
  const std::string path =
      (std::filesystem::temp_directory_path() / "nfmpc_flow_test.ckpt").string();
  flow.save(path, nlohmann::json{{"tag", 42}});
  nlohmann::json extra;
  FlowModel loaded = FlowModel::load(path, &extra);
  CHECK(extra.at("tag") == 42);
  CHECK(loaded.dim() == flow.dim());
  CHECK(loaded.context_dim() == flow.context_dim());
  for (std::size_t i = 0; i < flow.params().size(); ++i)
    CHECK(loaded.params().data()[i] == flow.params().data()[i]);

  const Vec c = random_vec(3, rng);
  const Vec z = random_vec(8, rng);
  const FlowEval a = flow.push(z, c);
  const FlowEval b = loaded.push(z, c);
  for (int d = 0; d < 8; ++d) CHECK(a.output[d] == b.output[d]);
  std::filesystem::remove(path);
}
