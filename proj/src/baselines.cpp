#include "expt/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <memory>
#include <numeric>
#include <string>

#include "expt/errors.hpp"
#include "expt/log.hpp"
#include "expt/nn/ops.hpp"
#include "expt/nn/optim.hpp"

namespace expt::baselines {

void TnpEdConfig::validate() const {
  model::ExPTConfig probe;
  probe.d_x = d_x;
  probe.encoder = encoder;
  probe.validate();
}

template <typename T>
TnpEdModel<T>::TnpEdModel(const TnpEdConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng = Rng::stream(seed, 0x746e70);
  encoder_ = model::InContextEncoder<T>(store_, config.d_x, config.d_x, config.encoder, rng);
  head = nn::Linear<T>(store_, "head", config.encoder.dim, 1, rng);
}

template <typename T>
nn::Tensor<T> TnpEdModel<T>::predict(const ContextSet& context, const nn::Tensor<T>& targets,
                                     const nn::ForwardContext& ctx, const model::YScaling* scaling) const {
  if (context.size() == 0) throw InputError("tnp-ed: empty context");
  if (targets.cols() != config_.d_x)
    throw InputError("tnp-ed: target dimension " + std::to_string(targets.cols()) + " != model d_x " +
                     std::to_string(config_.d_x));
  const ContextSet* ptr = &context;
  nn::Tensor<T> pairs = model::pair_tokens<T>(std::span<const ContextSet* const>(&ptr, 1), scaling);
  return head(encoder_.encode_targets(pairs, targets, 1, context.size(), targets.rows(), ctx));
}

template <typename T>
nn::Tensor<T> TnpEdModel<T>::loss(const Episode& episode, Rng& rng, const nn::ForwardContext& ctx) const {
  return batch_loss(std::span<const Episode>(&episode, 1), rng, ctx);
}

template <typename T>
nn::Tensor<T> TnpEdModel<T>::batch_loss(std::span<const Episode> episodes, Rng&,
                                        const nn::ForwardContext& ctx) const {
  if (episodes.empty()) throw InputError("tnp-ed: empty batch");
  const std::size_t m = episodes[0].context_size();
  const std::size_t t = episodes[0].target_size();
  const auto d = static_cast<Eigen::Index>(config_.d_x);
  std::vector<ContextSet> contexts;
  contexts.reserve(episodes.size());
  Points target_x(static_cast<Eigen::Index>(episodes.size() * t), d);
  Values target_y(static_cast<Eigen::Index>(episodes.size() * t));
  for (std::size_t b = 0; b < episodes.size(); ++b) {
    const Episode& ep = episodes[b];
    if (ep.context_size() != m || ep.target_size() != t) throw InputError("tnp-ed: episodes differ in shape");
    if (ep.dim() != config_.d_x)
      throw InputError("tnp-ed: episode dimension " + std::to_string(ep.dim()) + " != model d_x " +
                       std::to_string(config_.d_x));
    contexts.push_back({ep.context_x, ep.context_y});
    target_x.middleRows(static_cast<Eigen::Index>(b * t), static_cast<Eigen::Index>(t)) = ep.target_x;
    target_y.segment(static_cast<Eigen::Index>(b * t), static_cast<Eigen::Index>(t)) = ep.target_y;
  }
  std::vector<const ContextSet*> ptrs;
  for (const auto& c : contexts) ptrs.push_back(&c);
  nn::Tensor<T> h = encoder_.encode_targets(model::pair_tokens<T>(ptrs), model::to_tensor<T>(target_x),
                                            episodes.size(), m, t, ctx);
  nn::Tensor<T> se = nn::squared_error(head(h), model::to_tensor<T>(target_y));
  return nn::scale(se, static_cast<T>(1.0 / static_cast<double>(episodes.size() * t)));
}

template <typename T>
FreezeGuard<T>::FreezeGuard(const nn::ParameterStore<T>& store) : params_(store.tensors()) {
  previous_.reserve(params_.size());
  for (auto& p : params_) {
    previous_.push_back(p.requires_grad());
    p.set_requires_grad(false);
  }
}

template <typename T>
FreezeGuard<T>::~FreezeGuard() {
  for (std::size_t i = 0; i < params_.size(); ++i) params_[i].set_requires_grad(previous_[i]);
}

Points top_q_init(const ContextSet& few_shot, std::size_t q) {
  if (few_shot.size() == 0) throw InputError("ascent: empty few-shot set");
  if (q == 0) throw InputError("ascent: Q must be positive");
  std::vector<std::size_t> order(few_shot.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return few_shot.y[static_cast<Eigen::Index>(a)] > few_shot.y[static_cast<Eigen::Index>(b)];
  });
  Points init(static_cast<Eigen::Index>(q), few_shot.x.cols());
  for (std::size_t i = 0; i < q; ++i)
    init.row(static_cast<Eigen::Index>(i)) = few_shot.x.row(static_cast<Eigen::Index>(order[i % order.size()]));
  return init;
}

Points gradient_ascent(const Points& init, std::size_t steps, double step_size, const Interval& box,
                       const GradientFn& grad) {
  if (!(step_size >= 0.0)) throw ConfigError("ascent step_size must be non-negative");
  Points x = init;
  for (std::size_t s = 0; s < steps; ++s) {
    Points g = grad(x);
    if (g.rows() != x.rows() || g.cols() != x.cols()) throw InputError("ascent: gradient shape mismatch");
    if (!g.allFinite()) throw NumericError("ascent: non-finite gradient at step " + std::to_string(s));
    x = (x + step_size * g).cwiseMax(box.lo).cwiseMin(box.hi);
  }
  return x;
}

template <typename T>
Points tnp_ed_optimize(const ContextSet& few_shot, const TnpEdModel<T>& model, const AscentConfig& ascent,
                       std::size_t q, const Interval& box) {
  Points init = top_q_init(few_shot, q);
  if (static_cast<std::size_t>(init.cols()) != model.config().d_x)
    throw InputError("tnp-ed: few-shot dimension does not match model d_x");
  FreezeGuard<T> freeze(model.parameters());
  const model::YScaling scaling = model::YScaling::fit(few_shot.y, 1.0);
  // Targets attend only the context and themselves, so the gradient of the
  // summed prediction is each target's own gradient.
  auto grad = [&](const Points& x) {
    nn::Tensor<T> xt = model::to_tensor<T>(x);
    xt.set_requires_grad(true);
    nn::Tensor<T> total = nn::sum(model.predict(few_shot, xt, nn::ForwardContext{}, &scaling));
    nn::backward(total);
    Points g(x.rows(), x.cols());
    auto gv = xt.grad();
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = static_cast<double>(gv[static_cast<std::size_t>(i)]);
    return g;
  };
  return gradient_ascent(init, ascent.steps, ascent.step_size, box, grad);
}

std::string_view to_string(ReduceMode mode) {
  switch (mode) {
    case ReduceMode::kSingle: return "single";
    case ReduceMode::kMin: return "min";
    case ReduceMode::kMean: return "mean";
  }
  return "?";
}

ReduceMode parse_reduce_mode(std::string_view name) {
  if (name == "single") return ReduceMode::kSingle;
  if (name == "min") return ReduceMode::kMin;
  if (name == "mean") return ReduceMode::kMean;
  throw ConfigError("unknown reduce mode '" + std::string(name) + "' (expected single|min|mean)");
}

void SurrogateConfig::validate() const {
  if (ensemble_size == 0) throw ConfigError("baselines.ensemble_size must be >= 1");
  if (reduce == ReduceMode::kSingle && ensemble_size != 1)
    throw ConfigError("reduce mode single requires baselines.ensemble_size = 1");
  if (hidden == 0) throw ConfigError("baselines.surrogate_hidden must be positive");
  if (!(lr > 0.0)) throw ConfigError("baselines.surrogate_lr must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("surrogate weight decay must be non-negative");
}

SurrogateEnsemble::SurrogateEnsemble(const SurrogateConfig& config, std::size_t d_x, std::uint64_t seed)
    : config_(config), d_x_(d_x) {
  config_.validate();
  if (d_x == 0) throw ConfigError("surrogate input dimension must be positive");
  members_.resize(config.ensemble_size);
  for (std::size_t e = 0; e < members_.size(); ++e) {
    Rng rng = Rng::stream(seed, 0x73757272, e);
    members_[e].net = nn::Mlp<double>(members_[e].store, "surrogate", d_x, config.hidden, 1, config.hidden_layers + 1,
                                      nn::Activation::kTanh, rng);
  }
}

void SurrogateEnsemble::set_reduce_mode(ReduceMode mode) {
  SurrogateConfig next = config_;
  next.reduce = mode;
  next.validate();
  config_ = next;
}

Eigen::MatrixXd SurrogateEnsemble::member_predictions(const Points& x) const {
  if (static_cast<std::size_t>(x.cols()) != d_x_) throw InputError("surrogate: input dimension mismatch");
  nn::NoGradGuard no_grad;
  nn::Tensor<double> xt = model::to_tensor<double>(x);
  Eigen::MatrixXd out(x.rows(), static_cast<Eigen::Index>(members_.size()));
  for (std::size_t e = 0; e < members_.size(); ++e) {
    nn::Tensor<double> p = members_[e].net(xt);
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      out(i, static_cast<Eigen::Index>(e)) = y_mean + y_std * p.values()[static_cast<std::size_t>(i)];
  }
  return out;
}

Values SurrogateEnsemble::predict(const Points& x) const {
  Eigen::MatrixXd p = member_predictions(x);
  Values out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    out[i] = config_.reduce == ReduceMode::kMin ? p.row(i).minCoeff() : p.row(i).mean();
  return out;
}

nn::Tensor<double> SurrogateEnsemble::reduced_sum(const nn::Tensor<double>& x,
                                                  const Eigen::MatrixXd& member_values) const {
  const std::size_t q = x.rows();
  const std::size_t e_count = members_.size();
  std::vector<std::vector<double>> weights(e_count, std::vector<double>(q, 0.0));
  for (std::size_t i = 0; i < q; ++i) {
    if (config_.reduce == ReduceMode::kMin) {
      Eigen::Index best = 0;
      member_values.row(static_cast<Eigen::Index>(i)).minCoeff(&best);
      weights[static_cast<std::size_t>(best)][i] = y_std;
    } else {
      for (std::size_t e = 0; e < e_count; ++e) weights[e][i] = y_std / static_cast<double>(e_count);
    }
  }
  nn::Tensor<double> total;
  for (std::size_t e = 0; e < e_count; ++e) {
    nn::Tensor<double> term =
        nn::sum(nn::mul(members_[e].net(x), nn::Tensor<double>::from(std::move(weights[e]), q, 1)));
    total = total ? nn::add(total, term) : term;
  }
  return total;
}

Points SurrogateEnsemble::gradient(const Points& x) const {
  Eigen::MatrixXd values = member_predictions(x);
  std::vector<std::unique_ptr<FreezeGuard<double>>> freeze;
  for (const auto& m : members_) freeze.push_back(std::make_unique<FreezeGuard<double>>(m.store));
  nn::Tensor<double> xt = model::to_tensor<double>(x);
  xt.set_requires_grad(true);
  nn::backward(reduced_sum(xt, values));
  Points g(x.rows(), x.cols());
  auto gv = xt.grad();
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = gv[static_cast<std::size_t>(i)];
  return g;
}

SurrogateEnsemble surrogate_train(const ContextSet& few_shot, const SurrogateConfig& config, std::uint64_t seed) {
  if (few_shot.size() < 2) throw InputError("surrogate_train: need at least 2 few-shot points");
  if (few_shot.y.size() != few_shot.x.rows()) throw InputError("surrogate_train: x/y row count mismatch");
  SurrogateEnsemble ens(config, static_cast<std::size_t>(few_shot.x.cols()), seed);
  const model::YScaling scaling = model::YScaling::fit(few_shot.y, 1.0);
  if (few_shot.y.maxCoeff() == few_shot.y.minCoeff())
    log::warn("surrogate_train: all few-shot y values are equal; the surrogate is constant");
  ens.y_mean = scaling.mean;
  ens.y_std = scaling.stddev;
  const nn::Tensor<double> xt = model::to_tensor<double>(few_shot.x);
  const nn::Tensor<double> yt = model::to_tensor<double>(scaling.apply(few_shot.y));
  const double inv_n = 1.0 / static_cast<double>(few_shot.size());
  ens.final_losses.assign(ens.size(), 0.0);
  nn::AdamWConfig adamw;
  adamw.weight_decay = config.weight_decay;
  std::exception_ptr failure;
  const auto count = static_cast<std::ptrdiff_t>(ens.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t e = 0; e < count; ++e) {
    try {
      auto& member = ens.members_[static_cast<std::size_t>(e)];
      std::vector<nn::Tensor<double>> params = member.store.tensors();
      nn::OptimizerState<double> state(adamw, params);
      double last = 0.0;
      for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        member.store.zero_grad();
        nn::Tensor<double> loss = nn::scale(nn::squared_error(member.net(xt), yt), inv_n);
        nn::backward(loss);
        nn::adamw_step<double>(params, state, config.lr);
        last = loss.item();
      }
      if (config.epochs > 0) {
        nn::NoGradGuard no_grad;
        last = nn::scale(nn::squared_error(member.net(xt), yt), inv_n).item();
      }
      ens.final_losses[static_cast<std::size_t>(e)] = last;
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return ens;
}

Points grad_ascent_optimize(const SurrogateEnsemble& ensemble, const ContextSet& few_shot,
                            const AscentConfig& ascent, std::size_t q, const Interval& box) {
  Points init = top_q_init(few_shot, q);
  return gradient_ascent(init, ascent.steps, ascent.step_size, box,
                         [&](const Points& x) { return ensemble.gradient(x); });
}

template class TnpEdModel<float>;
template class TnpEdModel<double>;
template class FreezeGuard<float>;
template class FreezeGuard<double>;
template Points tnp_ed_optimize<float>(const ContextSet&, const TnpEdModel<float>&, const AscentConfig&, std::size_t,
                                       const Interval&);
template Points tnp_ed_optimize<double>(const ContextSet&, const TnpEdModel<double>&, const AscentConfig&,
                                        std::size_t, const Interval&);

}  // namespace expt::baselines
