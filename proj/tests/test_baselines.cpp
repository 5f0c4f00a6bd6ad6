#include <doctest.h>

#include <cmath>

#include "expt/baselines.hpp"
#include "expt/errors.hpp"
#include "expt/nn/optim.hpp"
#include "expt/train.hpp"
#include "support.hpp"

using namespace expt;
using namespace expt::baselines;

namespace {

TnpEdConfig micro_tnp() {
  TnpEdConfig c;
  c.d_x = 4;
  c.encoder = {2, 16, 4, 0.1, 2};
  return c;
}

synthfn::GeneratorConfig micro_generator() {
  synthfn::GeneratorConfig g;
  g.dimension = 4;
  g.points_per_function = 10;
  g.context_size = 6;
  return g;
}

ContextSet quadratic_samples(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  ContextSet c;
  c.x.resize(static_cast<Eigen::Index>(n), 2);
  c.y.resize(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < c.x.rows(); ++i) {
    c.x(i, 0) = rng.uniform(-3, 3);
    c.x(i, 1) = rng.uniform(-3, 3);
    c.y[i] = -c.x.row(i).squaredNorm();
  }
  return c;
}

void copy_parameters(const nn::ParameterStore<double>& from, const nn::ParameterStore<double>& to) {
  for (const auto& [name, src] : from.entries()) {
    auto dst = to.find(name);
    std::copy(src.values().begin(), src.values().end(), dst.values().begin());
  }
}

std::vector<double> weights_of(const SurrogateEnsemble& ens, std::size_t e) {
  const auto v = ens.member_parameters(e).find("surrogate.0.weight").values();
  return {v.begin(), v.end()};
}

const Interval kBox{-3, 3};

}  // namespace

TEST_CASE("tnp-ed loss with a least-squares rigged head is zero") {
  TnpEdModel<double> model(micro_tnp(), 1);
  const auto ep = model::sample_batch(micro_generator(), 1, 2, 0, nullptr)[0];
  // Solve head weights so that head(h_i) = y_i exactly (4 targets, 17
  // unknowns). The hidden states are read back through the head itself by
  // setting its weight to each unit vector in turn.
  auto w = model.parameters().find("head.weight");
  auto b = model.parameters().find("head.bias");
  const std::size_t D = 16, t = ep.target_size();
  Eigen::MatrixXd H(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(D + 1));
  Rng rng(3);
  const ContextSet ctx{ep.context_x, ep.context_y};
  const auto targets = model::to_tensor<double>(ep.target_x);
  for (std::size_t k = 0; k <= D; ++k) {
    std::fill(w.values().begin(), w.values().end(), 0.0);
    b.values()[0] = k == D ? 1.0 : 0.0;
    if (k < D) w.values()[k] = 1.0;
    const auto p = model.predict(ctx, targets, {});
    for (std::size_t i = 0; i < t; ++i) H(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = p.values()[i];
  }
  const Eigen::VectorXd sol = H.completeOrthogonalDecomposition().solve(ep.target_y);
  for (std::size_t k = 0; k < D; ++k) w.values()[k] = sol[static_cast<Eigen::Index>(k)];
  b.values()[0] = sol[static_cast<Eigen::Index>(D)];
  CHECK(tnp_ed_loss(ep, model, rng).item() < 1e-20);
}

TEST_CASE("tnp-ed loss of a zero head on standardized targets is their variance") {
  TnpEdModel<double> model(micro_tnp(), 4);
  auto ep = model::sample_batch(micro_generator(), 1, 5, 0, nullptr)[0];
  const double mean = ep.target_y.mean();
  const double sd = std::sqrt((ep.target_y.array() - mean).square().mean());
  ep.target_y = (ep.target_y.array() - mean) / sd;
  auto w = model.parameters().find("head.weight");
  std::fill(w.values().begin(), w.values().end(), 0.0);
  model.parameters().find("head.bias").values()[0] = 0.0;
  Rng rng(6);
  CHECK(tnp_ed_loss(ep, model, rng).item() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("tnp-ed loss passes a finite-difference check") {
  TnpEdModel<double> model(micro_tnp(), 7);
  const auto batch = model::sample_batch(micro_generator(), 2, 8, 0, nullptr);
  const auto r = testing::check_gradients(model.parameters(), [&] {
    Rng rng(9);
    return model.batch_loss(batch, rng, nn::ForwardContext{true, &rng});
  });
  INFO(r.worst);
  CHECK(r.checked == model.parameters().scalar_count());
  CHECK(r.violations == 0);
}

TEST_CASE("tnp-ed target predictions ignore other targets") {
  TnpEdModel<float> model(micro_tnp(), 10);
  Rng rng(11);
  std::size_t violations = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const auto ep = model::sample_batch(micro_generator(), 1, 100 + static_cast<std::uint64_t>(trial), 0, nullptr)[0];
    const ContextSet ctx{ep.context_x, ep.context_y};
    auto targets = model::to_tensor<float>(ep.target_x);
    const auto base = model.predict(ctx, targets, {});
    const std::size_t j = rng.below(ep.target_size());
    auto perturbed = targets.detach();
    for (std::size_t c = 0; c < 4; ++c) perturbed.at(j, c) += static_cast<float>(rng.normal());
    const auto out = model.predict(ctx, perturbed, {});
    for (std::size_t i = 0; i < ep.target_size(); ++i)
      if (i != j) violations += out.values()[i] != base.values()[i];
  }
  CHECK(violations == 0);
}

TEST_CASE("tnp-ed gradient ascent") {
  TnpEdModel<double> model(micro_tnp(), 12);
  {
    // A short fit so the predictor is a smooth function of x.
    auto params = model.parameters().tensors();
    nn::OptimizerState<double> state({}, params);
    for (int step = 0; step < 100; ++step) {
      const auto batch = model::sample_batch(micro_generator(), 8, 13, step, nullptr);
      Rng rng(step);
      model.parameters().zero_grad();
      nn::backward(model.batch_loss(batch, rng, {}));
      nn::adamw_step<double>(params, state, 1e-3);
    }
  }
  const auto ep = model::sample_batch(micro_generator(), 1, 14, 0, nullptr)[0];
  const ContextSet few{ep.context_x, ep.context_y};
  const std::size_t q = 16;
  const Points init = top_q_init(few, q);

  SUBCASE("zero steps return the initialization") {
    CHECK(tnp_ed_optimize(few, model, AscentConfig{0, 1e-2}, q, kBox) == init);
  }
  SUBCASE("small steps never lower the prediction") {
    const Points out = tnp_ed_optimize(few, model, AscentConfig{200, 1e-3}, q, kBox);
    const auto scaling = model::YScaling::fit(few.y, 1.0);
    nn::NoGradGuard ng;
    const auto before = model.predict(few, model::to_tensor<double>(init), {}, &scaling);
    const auto after = model.predict(few, model::to_tensor<double>(out), {}, &scaling);
    for (std::size_t i = 0; i < q; ++i) CHECK(after.values()[i] >= before.values()[i]);
    CHECK(out.minCoeff() >= -3.0);
    CHECK(out.maxCoeff() <= 3.0);
  }
  SUBCASE("parameters are restored after ascent") {
    tnp_ed_optimize(few, model, AscentConfig{2, 1e-2}, q, kBox);
    for (const auto& p : model.parameters().tensors()) CHECK(p.requires_grad());
  }
  CHECK(AscentConfig{}.steps == 200);
}

TEST_CASE("top-q initialization orders by y and cycles") {
  ContextSet few;
  few.x.resize(3, 1);
  few.x << 10, 20, 30;
  few.y.resize(3);
  few.y << 0.5, 2.0, 0.5;
  const Points init = top_q_init(few, 7);
  Eigen::VectorXd want(7);
  want << 20, 10, 30, 20, 10, 30, 20;
  CHECK(init.col(0) == want);
  CHECK_THROWS_AS(top_q_init(ContextSet{}, 3), InputError);
}

TEST_CASE("ascent steps approach the gradient flow of a 1-D quadratic") {
  // f(x) = -a (x - c)^2 flows as x(t) = c + (x0 - c) exp(-2 a t).
  const double a = 1.5, c = 0.4, x0 = -2.0, horizon = 1.0;
  GradientFn grad = [&](const Points& x) { return Points((-2.0 * a) * (x.array() - c)); };
  Points init(1, 1);
  init(0, 0) = x0;
  const double flow = c + (x0 - c) * std::exp(-2 * a * horizon);
  for (std::size_t steps : {1000, 10000}) {
    const Points out = gradient_ascent(init, steps, horizon / static_cast<double>(steps), Interval{-10, 10}, grad);
    CHECK(std::abs(out(0, 0) - flow) <= 0.05 * std::abs(flow - x0));
    CHECK(std::abs((out(0, 0) - c) / (flow - c) - 1.0) < 0.05);
  }
  CHECK_THROWS_AS(gradient_ascent(init, 1, -1.0, kBox, grad), ConfigError);
}

TEST_CASE("surrogate configuration rules") {
  SurrogateConfig c;
  c.ensemble_size = 1;
  c.reduce = ReduceMode::kSingle;
  CHECK_NOTHROW(c.validate());
  c.ensemble_size = 5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.ensemble_size = 0;
  c.reduce = ReduceMode::kMean;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(parse_reduce_mode("min") == ReduceMode::kMin);
  CHECK_THROWS_AS(parse_reduce_mode("max"), ConfigError);
  const SurrogateConfig defaults;
  CHECK(defaults.ensemble_size == 5);
  CHECK(defaults.hidden == 256);
  CHECK(defaults.hidden_layers == 2);
  CHECK(defaults.epochs == 500);
  CHECK(defaults.lr == 1e-3);
}

TEST_CASE("surrogate members start from distinct parameters") {
  SurrogateConfig c;
  c.epochs = 0;
  c.hidden = 16;
  const auto ens = surrogate_train(quadratic_samples(8, 1), c, 2);
  REQUIRE(ens.size() == 5);
  for (std::size_t a = 0; a < 5; ++a)
    for (std::size_t b = a + 1; b < 5; ++b)
      CHECK(weights_of(ens, a) != weights_of(ens, b));
  CHECK_THROWS_AS(surrogate_train(quadratic_samples(1, 1), c, 2), InputError);
}

TEST_CASE("surrogate fits a constant target") {
  ContextSet few = quadratic_samples(10, 3);
  few.y.setConstant(3.0);
  SurrogateConfig c;
  c.ensemble_size = 1;
  c.reduce = ReduceMode::kSingle;
  const auto ens = surrogate_train(few, c, 4);
  const Eigen::MatrixXd p = ens.member_predictions(few.x);
  CHECK((p.array() - 3.0).abs().maxCoeff() < 1e-2);
}

TEST_CASE("surrogate ascent on a concave bowl ends near the peak") {
  SurrogateConfig c;
  c.ensemble_size = 1;
  c.reduce = ReduceMode::kSingle;
  const auto ens = surrogate_train(quadratic_samples(64, 5), c, 6);
  Points start(1, 2);
  start << 2.0, 2.0;
  const Points out =
      gradient_ascent(start, 200, 1e-2, kBox, [&](const Points& x) { return ens.gradient(x); });
  INFO(out);
  CHECK(out.row(0).norm() < 0.5);
}

TEST_CASE("reduce modes") {
  const ContextSet few = quadratic_samples(16, 7);
  SurrogateConfig single_cfg;
  single_cfg.ensemble_size = 1;
  single_cfg.reduce = ReduceMode::kSingle;
  single_cfg.hidden = 32;
  single_cfg.epochs = 50;
  SurrogateConfig pair_cfg = single_cfg;
  pair_cfg.ensemble_size = 2;

  SUBCASE("min follows a member that is always far lower") {
    pair_cfg.reduce = ReduceMode::kMin;
    auto pair = surrogate_train(few, pair_cfg, 8);
    // Member 1 keeps its shape but sits 1e6 below member 0.
    auto bias = pair.member_parameters(1).find("surrogate.2.bias");
    bias.values()[0] -= 1e6 / pair.y_std;
    auto alone = surrogate_train(few, single_cfg, 9);
    copy_parameters(pair.member_parameters(1), alone.member_parameters(0));
    alone.y_mean = pair.y_mean;
    alone.y_std = pair.y_std;
    CHECK(pair.member_predictions(few.x).col(1).maxCoeff() < -9e5);
    const Points a = grad_ascent_optimize(pair, few, AscentConfig{50, 1e-2}, 8, kBox);
    const Points b = grad_ascent_optimize(alone, few, AscentConfig{50, 1e-2}, 8, kBox);
    for (Eigen::Index i = 0; i < a.size(); ++i) CHECK(a.data()[i] == doctest::Approx(b.data()[i]).epsilon(1e-12));
  }
  SUBCASE("mean of identical members matches single") {
    pair_cfg.reduce = ReduceMode::kMean;
    auto pair = surrogate_train(few, pair_cfg, 10);
    copy_parameters(pair.member_parameters(0), pair.member_parameters(1));
    auto alone = surrogate_train(few, single_cfg, 11);
    copy_parameters(pair.member_parameters(0), alone.member_parameters(0));
    alone.y_mean = pair.y_mean;
    alone.y_std = pair.y_std;
    const Points a = grad_ascent_optimize(pair, few, AscentConfig{50, 1e-2}, 8, kBox);
    const Points b = grad_ascent_optimize(alone, few, AscentConfig{50, 1e-2}, 8, kBox);
    for (Eigen::Index i = 0; i < a.size(); ++i) CHECK(a.data()[i] == doctest::Approx(b.data()[i]).epsilon(1e-12));
    CHECK(pair.predict(few.x) == alone.predict(few.x));
  }
  SUBCASE("candidates stay inside the box") {
    pair_cfg.reduce = ReduceMode::kMean;
    const auto pair = surrogate_train(few, pair_cfg, 12);
    const Points out = grad_ascent_optimize(pair, few, AscentConfig{200, 1.0}, 32, kBox);
    CHECK(out.rows() == 32);
    CHECK(out.minCoeff() >= -3.0);
    CHECK(out.maxCoeff() <= 3.0);
  }
}
