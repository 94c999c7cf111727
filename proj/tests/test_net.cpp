#include <doctest.h>

#include <cmath>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "nfmpc/adam.hpp"
#include "nfmpc/net.hpp"
#include "nfmpc/verify.hpp"

using namespace nfmpc;

namespace {

Vec random_vec(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Vec v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace

TEST_CASE("mlp with zero weights returns the activated bias") {
  NetworkSpec spec = NetworkSpec::mlp({3, 2}, {Activation::kTanh}, {false});
  ParamVector params;
  params.add_segment("net/l0/W", 2, 3);
  params.add_segment("net/l0/b", 2);
  params.seg("net/l0/b")[0] = 0.3;
  params.seg("net/l0/b")[1] = -1.2;
  const Vec out = mlp_apply(params, "net", spec, Vec{1.0, -2.0, 0.5});
  CHECK(out[0] == doctest::Approx(std::tanh(0.3)).epsilon(1e-15));
  CHECK(out[1] == doctest::Approx(std::tanh(-1.2)).epsilon(1e-15));
}

TEST_CASE("identity layer with W=I, b=0 is the identity") {
  NetworkSpec spec = NetworkSpec::mlp({3, 3}, {Activation::kIdentity}, {false});
  ParamVector params;
  params.add_segment("net/l0/W", 3, 3);
  params.add_segment("net/l0/b", 3);
  Span W = params.seg("net/l0/W");
  for (int i = 0; i < 3; ++i) W[i * 3 + i] = 1.0;
  const Vec x{0.7, -0.2, 3.1};
  const Vec out = mlp_apply(params, "net", spec, x);
  for (int i = 0; i < 3; ++i) CHECK(out[i] == x[i]);
}

TEST_CASE("three-layer net matches a straight-line hand evaluation") {
  Rng rng(42);
  NetworkSpec spec = NetworkSpec::mlp({4, 5, 3, 2},
                                      {Activation::kTanh, Activation::kTanh,
                                       Activation::kIdentity},
                                      {false, false, false});
  ParamVector params;
  mlp_init(params, "net", spec, rng, false);
  const Vec x = random_vec(4, rng);
  const Vec out = mlp_apply(params, "net", spec, x);

  // independent evaluation: per-layer explicit loops over the raw segments
  Vec h = x;
  const int sizes[4] = {4, 5, 3, 2};
  for (int l = 0; l < 3; ++l) {
    ConstSpan W = params.seg("net/l" + std::to_string(l) + "/W");
    ConstSpan b = params.seg("net/l" + std::to_string(l) + "/b");
    Vec next(sizes[l + 1]);
    for (int i = 0; i < sizes[l + 1]; ++i) {
      double s = b[i];
      for (int j = 0; j < sizes[l]; ++j) s += W[i * sizes[l] + j] * h[j];
      next[i] = l < 2 ? std::tanh(s) : s;
    }
    h = next;
  }
  for (int i = 0; i < 2; ++i) CHECK(out[i] == doctest::Approx(h[i]).epsilon(1e-14));
}

TEST_CASE("linear layer backward has the closed-form gradients") {
  NetworkSpec spec = NetworkSpec::mlp({3, 2}, {Activation::kIdentity}, {false});
  Rng rng(7);
  ParamVector params;
  mlp_init(params, "net", spec, rng, false);
  const Vec x{0.5, -1.0, 2.0};
  const Vec g{2.0, -3.0};
  GradientRecord rec = mlp_backward(params, "net", spec, x, g);

  ConstSpan W = params.seg("net/l0/W");
  ConstSpan dW = rec.grads.seg("net/l0/W");
  ConstSpan db = rec.grads.seg("net/l0/b");
  for (int i = 0; i < 2; ++i) {
    CHECK(db[i] == g[i]);
    for (int j = 0; j < 3; ++j) CHECK(dW[i * 3 + j] == doctest::Approx(g[i] * x[j]));
  }
  for (int j = 0; j < 3; ++j) {
    double expected = 0.0;
    for (int i = 0; i < 2; ++i) expected += W[i * 3 + j] * g[i];
    CHECK(rec.input_grad[j] == doctest::Approx(expected).epsilon(1e-14));
  }
}

TEST_CASE("zero upstream gradient gives an all-zero record") {
  NetworkSpec spec = NetworkSpec::mlp_uniform(3, {4}, 2, Activation::kRelu, true);
  Rng rng(9);
  ParamVector params;
  mlp_init(params, "net", spec, rng, false);
  GradientRecord rec = mlp_backward(params, "net", spec, Vec{0.1, 0.2, 0.3}, Vec{0.0, 0.0});
  for (double v : rec.grads.values()) CHECK(v == 0.0);
  for (double v : rec.input_grad) CHECK(v == 0.0);
}

TEST_CASE("mlp parameter gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(100 + seed);
    NetworkSpec spec = NetworkSpec::mlp({4, 6, 3},
                                        {Activation::kTanh, Activation::kIdentity},
                                        {true, false});
    ParamVector params;
    mlp_init(params, "net", spec, rng, false);
    const Vec x = random_vec(4, rng);
    const Vec g = random_vec(3, rng);
    GradientRecord rec = mlp_backward(params, "net", spec, x, g);
    const Vec fd = verify::finite_diff_params(
        params, [&] { return dot(g, mlp_apply(params, "net", spec, x)); });
    CHECK(verify::max_rel_err(rec.grads.values(), fd) <= 1e-5);
  }
}

TEST_CASE("mlp rejects shape mismatches") {
  NetworkSpec spec = NetworkSpec::mlp({3, 2}, {Activation::kTanh}, {false});
  Rng rng(1);
  ParamVector params;
  mlp_init(params, "net", spec, rng);
  CHECK_THROWS_AS(mlp_apply(params, "net", spec, Vec{1.0, 2.0}), DimensionError);
  CHECK_THROWS_AS(mlp_backward(params, "net", spec, Vec{1.0, 2.0, 3.0}, Vec{1.0}),
                  DimensionError);
}

TEST_CASE("layer norm maps constant input to zero") {
  const Vec x(5, 3.7);
  const Vec gain(5, 1.0), bias(5, 0.0);
  for (double v : layer_norm_apply(x, gain, bias)) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("layer norm of (1,-1) with unit gain is (1,-1)") {
  const Vec out = layer_norm_apply(Vec{1.0, -1.0}, Vec{1.0, 1.0}, Vec{0.0, 0.0}, 1e-14);
  CHECK(out[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(out[1] == doctest::Approx(-1.0).epsilon(1e-9));
}

TEST_CASE("layer norm with zero gain returns the bias") {
  const Vec out = layer_norm_apply(Vec{0.4, 2.0, -1.0}, Vec{0.0, 0.0, 0.0}, Vec{5.0, 6.0, 7.0});
  CHECK(out[0] == 5.0);
  CHECK(out[1] == 6.0);
  CHECK(out[2] == 7.0);
}

TEST_CASE("layer norm rejects length mismatches") {
  CHECK_THROWS_AS(layer_norm_apply(Vec{1.0, 2.0}, Vec{1.0}, Vec{0.0, 0.0}), DimensionError);
}

TEST_CASE("lstm with all-zero parameters and state yields zeros") {
  LstmSpec spec{3, 4};
  ParamVector params;
  params.add_segment("cell/Wx", 16, 3);
  params.add_segment("cell/Wh", 16, 4);
  params.add_segment("cell/b", 16);
  LstmState next = lstm_step(params, "cell", spec, LstmState::zeros(4), Vec{1.0, -1.0, 0.5});
  for (double v : next.h) CHECK(v == doctest::Approx(0.0));
  for (double v : next.c) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("lstm gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(200 + seed);
    LstmSpec spec{3, 5};
    ParamVector params;
    lstm_init(params, "cell", spec, rng);
    LstmState state{random_vec(5, rng), random_vec(5, rng)};
    const Vec x = random_vec(3, rng);
    const Vec gh = random_vec(5, rng);
    const Vec gc = random_vec(5, rng);
    ParamVector grad = params.zeros_like();
    lstm_backward(params, "cell", spec, state, x, gh, gc, grad);
    const Vec fd = verify::finite_diff_params(params, [&] {
      LstmState next = lstm_step(params, "cell", spec, state, x);
      return dot(gh, next.h) + dot(gc, next.c);
    });
    CHECK(verify::max_rel_err(grad.values(), fd) <= 1e-5);
  }
}

TEST_CASE("lstm step is bit-deterministic") {
  Rng rng(3);
  LstmSpec spec{2, 3};
  ParamVector params;
  lstm_init(params, "cell", spec, rng);
  LstmState state{random_vec(3, rng), random_vec(3, rng)};
  const Vec x = random_vec(2, rng);
  LstmState a = lstm_step(params, "cell", spec, state, x);
  LstmState b = lstm_step(params, "cell", spec, state, x);
  for (int i = 0; i < 3; ++i) {
    CHECK(a.h[i] == b.h[i]);
    CHECK(a.c[i] == b.c[i]);
  }
}

TEST_CASE("adam first step matches the closed form") {
  ParamVector params;
  params.add_segment("w", 1);
  params.seg("w")[0] = 2.0;
  ParamVector grads = params.zeros_like();
  const double g = 0.37;
  grads.seg("w")[0] = g;
  AdamState state = AdamState::zeros_like(params);
  AdamConfig cfg;
  adam_step(params, grads, state, cfg);
  CHECK(state.m.seg("w")[0] == doctest::Approx((1.0 - cfg.beta1) * g).epsilon(1e-15));
  CHECK(state.v.seg("w")[0] == doctest::Approx((1.0 - cfg.beta2) * g * g).epsilon(1e-15));
  const double expected = 2.0 - cfg.lr * g / (std::abs(g) + cfg.eps);
  CHECK(params.seg("w")[0] == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("adam leaves parameters unchanged for zero gradients") {
  Rng rng(5);
  ParamVector params;
  params.add_segment("w", 4);
  Span w = params.seg("w");
  for (double& v : w) v = rng.uniform(-1.0, 1.0);
  const Vec before(w.begin(), w.end());
  ParamVector grads = params.zeros_like();
  AdamState state = AdamState::zeros_like(params);
  adam_step(params, grads, state, {});
  for (int i = 0; i < 4; ++i) CHECK(params.seg("w")[i] == before[i]);
}

TEST_CASE("adam is deterministic from identical state") {
  auto run = [] {
    ParamVector params;
    params.add_segment("w", 3);
    params.seg("w")[0] = 1.0;
    params.seg("w")[1] = -2.0;
    params.seg("w")[2] = 0.5;
    ParamVector grads = params.zeros_like();
    grads.seg("w")[0] = 0.1;
    grads.seg("w")[1] = -0.4;
    grads.seg("w")[2] = 1.9;
    AdamState state = AdamState::zeros_like(params);
    adam_step(params, grads, state, {});
    adam_step(params, grads, state, {});
    return Vec(params.seg("w").begin(), params.seg("w").end());
  };
  const Vec a = run(), b = run();
  for (int i = 0; i < 3; ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("adam rejects non-finite gradients with the segment name") {
  ParamVector params;
  params.add_segment("net/l0/W", 2, 2);
  ParamVector grads = params.zeros_like();
  grads.seg("net/l0/W")[1] = std::numeric_limits<double>::quiet_NaN();
  AdamState state = AdamState::zeros_like(params);
  CHECK_THROWS_WITH_AS(adam_step(params, grads, state, {}),
                       doctest::Contains("net/l0/W"), NumericError);
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  Rng rng(77);
  ParamVector params;
  params.add_segment("alpha", 3, 4);
  params.add_segment("beta", 7);
  Span b = params.seg("beta");
  for (double& v : params.seg("alpha")) v = rng.uniform(-10.0, 10.0);
  for (double& v : b) v = rng.normal();
  b[0] = 0x1.fffffffffffffp+1023;  // extreme magnitudes survive
  b[1] = 5e-324;

  const std::string path =
      (std::filesystem::temp_directory_path() / "nfmpc_ckpt_test.bin").string();
  nlohmann::json meta{{"note", "test"}};
  save_checkpoint(params, meta, path);
  nlohmann::json meta_back;
  ParamVector loaded = load_checkpoint(path, &meta_back);
  REQUIRE(loaded.same_layout(params));
  for (std::size_t i = 0; i < params.size(); ++i) CHECK(loaded.data()[i] == params.data()[i]);
  CHECK(meta_back.at("note") == "test");
  std::filesystem::remove(path);
}
