#include <doctest.h>

#include <cmath>
#include <numbers>

#include "expt/errors.hpp"
#include "expt/nn/layers.hpp"
#include "expt/nn/ops.hpp"
#include "expt/nn/optim.hpp"
#include "support.hpp"

using namespace expt;
using namespace expt::nn;
using expt::testing::check_gradients;

namespace {

using TD = Tensor<double>;

TD fixed(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = rng.normal();
  return TD::from(std::move(v), rows, cols);
}

// Weighted sum so every output element carries a distinct gradient.
TD project(const TD& y, std::uint64_t seed) { return sum(mul(y, fixed(y.rows(), y.cols(), seed))); }

void expect_gradients_ok(ParameterStore<double>& store, const std::function<TD()>& loss) {
  const auto r = check_gradients(store, loss);
  INFO("worst: " << r.worst << " rel " << r.max_rel_error);
  CHECK(r.checked > 0);
  CHECK(r.violations == 0);
}

AttentionMask context_target_mask(std::size_t m, std::size_t n) {
  AttentionMask mask(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) mask.set(i, j, true);
    mask.set(i, i, true);
  }
  return mask;
}

}  // namespace

TEST_CASE("backward of x^2 at 3 is 6") {
  auto x = TD::scalar(3.0, true);
  backward(mul(x, x));
  CHECK(x.grad()[0] == 6.0);
}

TEST_CASE("constant loss and off-path parameters get zero gradient") {
  Rng rng(1);
  ParameterStore<double> store;
  auto a = store.uniform("a", 2, 2, 1.0, rng);
  auto b = store.uniform("b", 2, 2, 1.0, rng);
  store.zero_grad();
  backward(sum(a));
  for (double g : b.grad()) CHECK(g == 0.0);
  store.zero_grad();
  backward(TD::scalar(4.0));
  for (double g : a.grad()) CHECK(g == 0.0);
}

TEST_CASE("backward rejects non-scalar and non-finite losses") {
  auto x = TD::from({1.0, 2.0}, 1, 2, true);
  CHECK_THROWS_AS(backward(x), InputError);
  auto y = TD::scalar(-1.0, true);
  auto bad = exp(scale(y, -1e6));
  try {
    backward(sum(bad));
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("exp") != std::string::npos);
  }
}

TEST_CASE("elementwise and structural ops pass finite-difference checks") {
  Rng rng(2);
  ParameterStore<double> store;
  auto a = store.uniform("a", 3, 4, 1.0, rng);
  auto b = store.uniform("b", 3, 4, 1.0, rng);
  auto w = store.uniform("w", 4, 5, 1.0, rng);
  auto bias = store.uniform("bias", 1, 5, 1.0, rng);
  SUBCASE("linear") { expect_gradients_ok(store, [&] { return project(linear(a, w, bias), 10); }); }
  SUBCASE("matmul") { expect_gradients_ok(store, [&] { return project(matmul(b, w), 11); }); }
  SUBCASE("add sub mul scale") {
    expect_gradients_ok(store, [&] { return project(scale(mul(add(a, b), sub(a, b)), 0.7), 12); });
  }
  SUBCASE("gelu tanh exp") {
    expect_gradients_ok(store, [&] { return project(add(gelu(a), mul(nn::tanh(b), nn::exp(scale(a, 0.3)))), 13); });
  }
  SUBCASE("mean and squared error") { expect_gradients_ok(store, [&] { return add(mean(a), squared_error(a, b)); }); }
  SUBCASE("concat slice gather") {
    expect_gradients_ok(store, [&] {
      auto c = concat_cols<double>({a, b});
      auto r = concat_rows<double>({slice_cols(c, 2, 6), slice_rows(b, 1, 3)});
      return project(gather_rows(r, {4, 0, 0, 2}), 14);
    });
  }
  SUBCASE("layer norm") {
    LayerNorm<double> ln(store, "ln", 4);
    for (auto& v : ln.gain.values()) v = 1.0 + 0.3 * rng.normal();
    for (auto& v : ln.bias.values()) v = 0.2 * rng.normal();
    expect_gradients_ok(store, [&] { return project(ln(a), 15); });
  }
  SUBCASE("dropout with a replayed stream") {
    expect_gradients_ok(store, [&] {
      Rng drop(5);
      return project(dropout(a, 0.3, &drop), 16);
    });
  }
}

TEST_CASE("masked attention passes a finite-difference check") {
  Rng rng(3);
  ParameterStore<double> store;
  const std::size_t batch = 2, seq = 5, D = 6;
  auto q = store.uniform("q", batch * seq, D, 1.0, rng);
  auto k = store.uniform("k", batch * seq, D, 1.0, rng);
  auto v = store.uniform("v", batch * seq, D, 1.0, rng);
  const auto mask = context_target_mask(2, seq);
  SUBCASE("eval") { expect_gradients_ok(store, [&] { return project(attention(q, k, v, mask, 2), 20); }); }
  SUBCASE("with attention dropout") {
    expect_gradients_ok(store, [&] {
      Rng drop(9);
      return project(attention(q, k, v, mask, 3, 0.2, &drop), 21);
    });
  }
}

TEST_CASE("random two-layer mlp passes a finite-difference check") {
  Rng rng(4);
  ParameterStore<double> store;
  Mlp<double> mlp(store, "mlp", 5, 16, 3, 2, Activation::kGelu, rng);
  const TD x = fixed(7, 5, 30);
  expect_gradients_ok(store, [&] { return project(mlp(x), 31); });
}

TEST_CASE("transformer layer passes a finite-difference check") {
  Rng rng(5);
  ParameterStore<double> store;
  TransformerLayer<double> layer(store, "layer", {8, 2, 16, 0.1}, rng);
  const TD x = fixed(2 * 6, 8, 40);
  const auto mask = context_target_mask(3, 6);
  expect_gradients_ok(store, [&] {
    Rng drop(3);
    return project(layer(x, mask, ForwardContext{true, &drop}), 41);
  });
}

TEST_CASE("identity transformer layer doubles standardized rows") {
  Rng rng(6);
  ParameterStore<double> store;
  TransformerLayer<double> layer(store, "layer", {4, 1, 8, 0.0}, rng);
  for (auto& v : layer.qkv.weight.values()) v = 0.0;
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t part = 0; part < 3; ++part) layer.qkv.weight.at(c, part * 4 + c) = 1.0;
  for (auto& v : layer.qkv.bias.values()) v = 0.0;
  for (auto& v : layer.proj.weight.values()) v = 0.0;
  for (std::size_t c = 0; c < 4; ++c) layer.proj.weight.at(c, c) = 1.0;
  for (auto& v : layer.proj.bias.values()) v = 0.0;
  for (auto& v : layer.ff2.weight.values()) v = 0.0;
  for (auto& v : layer.ff2.bias.values()) v = 0.0;
  AttentionMask self_only(3);
  for (std::size_t i = 0; i < 3; ++i) self_only.set(i, i, true);
  // Rows with zero mean and unit variance pass the pre-norm unchanged (up to
  // its epsilon), so the block returns x + x.
  const TD x = TD::from({1, -1, 1, -1, -1, -1, 1, 1, 1, 1, -1, -1}, 3, 4);
  const TD y = layer(x, self_only, {});
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(y.values()[i] == doctest::Approx(2.0 * x.values()[i]).epsilon(1e-5));
}

TEST_CASE("attention output rows ignore masked tokens bitwise") {
  Rng rng(7);
  ParameterStore<double> store;
  TransformerLayer<double> layer(store, "layer", {8, 2, 16, 0.1}, rng);
  const auto mask = context_target_mask(3, 7);
  TD x = fixed(7, 8, 50);
  const TD base = layer(x, mask, {});
  for (std::size_t j = 3; j < 7; ++j) {
    TD xp = x.detach();
    for (std::size_t c = 0; c < 8; ++c) xp.at(j, c) += 0.5;
    const TD out = layer(xp, mask, {});
    for (std::size_t i = 0; i < 7; ++i) {
      if (mask.allow(i, j)) continue;
      for (std::size_t c = 0; c < 8; ++c) REQUIRE(out.at(i, c) == base.at(i, c));
    }
  }
}

TEST_CASE("eval-mode forward passes are bitwise deterministic") {
  Rng rng(8);
  ParameterStore<float> store;
  TransformerEncoder<float> enc(store, "enc", 2, {16, 4, 32, 0.1}, rng);
  auto x = Tensor<float>::zeros(10, 16);
  for (auto& v : x.values()) v = static_cast<float>(rng.normal());
  const auto mask = context_target_mask(4, 10);
  const auto a = enc(x, mask, {});
  const auto b = enc(x, mask, {});
  CHECK(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
}

TEST_CASE("mask validation") {
  AttentionMask m(3);
  m.set(0, 0, true);
  m.set(1, 1, true);
  CHECK_THROWS_AS(m.validate(), InputError);
  m.set(2, 0, true);
  CHECK_THROWS_AS(m.validate(), InputError);
  m.set(2, 2, true);
  CHECK_NOTHROW(m.validate());
}

TEST_CASE("gelu at zero") {
  CHECK(gelu_scalar(0.0) == 0.0);
  CHECK(gelu_scalar(1.0) == doctest::Approx(0.8413447460685429).epsilon(1e-14));
}

TEST_CASE("adamw first step by hand") {
  auto theta = TD::scalar(1.0, true);
  std::vector<TD> params{theta};
  OptimizerState<double> state({0.9, 0.99, 1e-8, 0.0}, params);
  theta.mutable_grad()[0] = 2.0;
  adamw_step<double>(params, state, 0.1);
  CHECK(state.step == 1);
  CHECK(theta.item() == doctest::Approx(1.0 - 0.1 * 2.0 / (2.0 + 1e-8)).epsilon(1e-15));
}

TEST_CASE("adamw with zero gradient") {
  auto theta = TD::from({1.5, -2.0}, 1, 2, true);
  std::vector<TD> params{theta};
  SUBCASE("no decay leaves parameters unchanged") {
    OptimizerState<double> state({0.9, 0.99, 1e-8, 0.0}, params);
    theta.zero_grad();
    adamw_step<double>(params, state, 0.1);
    CHECK(theta.values()[0] == 1.5);
    CHECK(theta.values()[1] == -2.0);
  }
  SUBCASE("decoupled decay shrinks by 1 - lr wd") {
    OptimizerState<double> state({0.9, 0.99, 1e-8, 0.01}, params);
    theta.zero_grad();
    adamw_step<double>(params, state, 0.1);
    CHECK(theta.values()[0] == doctest::Approx(1.5 * (1 - 0.1 * 0.01)).epsilon(1e-15));
    CHECK(theta.values()[1] == doctest::Approx(-2.0 * (1 - 0.1 * 0.01)).epsilon(1e-15));
  }
}

TEST_CASE("gradient norm clipping") {
  auto a = TD::from({3.0, 4.0}, 1, 2, true);
  std::vector<TD> params{a};
  a.mutable_grad()[0] = 3.0;
  a.mutable_grad()[1] = 4.0;
  CHECK(clip_grad_norm<double>(params, 1.0) == doctest::Approx(5.0));
  CHECK(a.grad()[0] == doctest::Approx(0.6));
  CHECK(a.grad()[1] == doctest::Approx(0.8));
}

TEST_CASE("warmup cosine schedule") {
  const WarmupCosine s{5e-4, 1000, 9000};
  CHECK(s.lr_at(0) == 0.0);
  CHECK(s.lr_at(1000) == doctest::Approx(5e-4).epsilon(1e-15));
  CHECK(s.lr_at(5500) == doctest::Approx(2.5e-4).epsilon(1e-12));
  CHECK(s.lr_at(500) == doctest::Approx(2.5e-4).epsilon(1e-15));
  CHECK(s.lr_at(10000) == doctest::Approx(0.0));
  CHECK(s.lr_at(10001) == 0.0);
  CHECK(s.lr_at(999) == doctest::Approx(5e-4).epsilon(1e-3));
  CHECK(s.lr_at(1001) == doctest::Approx(5e-4).epsilon(1e-6));
  CHECK_THROWS_AS(s.lr_at(-1), InputError);
}

TEST_CASE("kl divergence of diagonal gaussians") {
  auto kl = [](double mu, double logvar) {
    return kl_diag_gaussian(TD::scalar(mu), TD::scalar(logvar)).item();
  };
  CHECK(kl(0.0, 0.0) == 0.0);
  CHECK(kl(1.0, 0.0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(kl(0.0, 1.0) == doctest::Approx(0.5 * (std::numbers::e - 2.0)).epsilon(1e-14));
  CHECK(kl(0.0, 1.0) == doctest::Approx(0.359141).epsilon(1e-6));
  Rng rng(9);
  for (int i = 0; i < 10000; ++i) REQUIRE(kl(rng.normal(0, 3), rng.normal(0, 3)) >= 0.0);
  Rng r2(10);
  ParameterStore<double> store;
  auto mu = store.uniform("mu", 3, 4, 1.0, r2);
  auto lv = store.uniform("logvar", 3, 4, 1.0, r2);
  expect_gradients_ok(store, [&] { return kl_diag_gaussian(mu, lv); });
}

TEST_CASE("reparameterization") {
  const auto mu = TD::from({0.3, -1.2}, 1, 2);
  SUBCASE("vanishing variance returns the mean") {
    Rng rng(1);
    const auto z = reparameterize(mu, TD::from({-60.0, -60.0}, 1, 2), rng);
    CHECK(std::abs(z.values()[0] - 0.3) < 1e-12);
    CHECK(std::abs(z.values()[1] + 1.2) < 1e-12);
  }
  SUBCASE("fixed seed replays") {
    Rng a(4), b(4);
    const auto lv = TD::from({0.5, -0.5}, 1, 2);
    CHECK(reparameterize(mu, lv, a).values()[1] == reparameterize(mu, lv, b).values()[1]);
  }
  SUBCASE("monte-carlo mean") {
    Rng rng(5);
    const std::size_t n = 100000;
    const auto m = TD::from(std::vector<double>(n, 0.7), n, 1);
    const auto lv = TD::from(std::vector<double>(n, 1.0), n, 1);
    const auto z = reparameterize(m, lv, rng);
    double total = 0.0;
    for (double v : z.values()) total += v;
    CHECK(std::abs(total / static_cast<double>(n) - 0.7) < 0.02);
  }
  SUBCASE("gradients reach mean and log-variance") {
    Rng r(6);
    ParameterStore<double> store;
    auto m = store.uniform("mu", 2, 3, 1.0, r);
    auto lv = store.uniform("logvar", 2, 3, 1.0, r);
    expect_gradients_ok(store, [&] {
      Rng eps(7);
      return project(reparameterize(m, lv, eps), 60);
    });
  }
}

TEST_CASE("shape mismatches throw") {
  CHECK_THROWS_AS(add(TD::zeros(2, 3), TD::zeros(3, 2)), InputError);
  CHECK_THROWS_AS(matmul(TD::zeros(2, 3), TD::zeros(2, 3)), InputError);
}
