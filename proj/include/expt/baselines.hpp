#pragma once

// Forward-modeling comparators: the in-context forward model TNP-ED and the
// surrogate gradient-ascent family (Grad. Asc / Min / Mean).

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "expt/model.hpp"
#include "expt/nn/layers.hpp"
#include "expt/rng.hpp"
#include "expt/synthfn.hpp"

namespace expt::baselines {

using model::ContextSet;
using synthfn::Episode;
using synthfn::Interval;
using synthfn::Points;
using synthfn::Values;

struct TnpEdConfig {
  std::size_t d_x = 32;
  model::EncoderConfig encoder;

  void validate() const;
};

/// ExPT's encoder stack with x-valued target tokens and a linear head h -> y.
template <typename T>
class TnpEdModel {
 public:
  TnpEdModel(const TnpEdConfig& config, std::uint64_t seed);
  TnpEdModel(const TnpEdModel&) = delete;
  TnpEdModel& operator=(const TnpEdModel&) = delete;
  TnpEdModel(TnpEdModel&&) = default;

  const TnpEdConfig& config() const { return config_; }
  nn::ParameterStore<T>& parameters() { return store_; }
  const nn::ParameterStore<T>& parameters() const { return store_; }

  /// Predictions [T, 1] for target inputs `targets` [T, d_x] given the context.
  /// Context y values pass through `scaling` when given.
  nn::Tensor<T> predict(const ContextSet& context, const nn::Tensor<T>& targets, const nn::ForwardContext& ctx,
                        const model::YScaling* scaling = nullptr) const;

  /// Mean over targets of (y_hat - y)^2 for one episode.
  nn::Tensor<T> loss(const Episode& episode, Rng& rng, const nn::ForwardContext& ctx) const;
  /// Mean squared error over all targets of equally shaped episodes.
  nn::Tensor<T> batch_loss(std::span<const Episode> episodes, Rng& rng, const nn::ForwardContext& ctx) const;

  nn::Linear<T> head;

 private:
  TnpEdConfig config_;
  nn::ParameterStore<T> store_;
  model::InContextEncoder<T> encoder_;
};

template <typename T>
nn::Tensor<T> tnp_ed_loss(const Episode& episode, const TnpEdModel<T>& model, Rng& rng) {
  return model.loss(episode, rng, nn::ForwardContext{});
}

/// Turns off requires_grad on every parameter of a store for its lifetime.
template <typename T>
class FreezeGuard {
 public:
  explicit FreezeGuard(const nn::ParameterStore<T>& store);
  ~FreezeGuard();
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  std::vector<nn::Tensor<T>> params_;
  std::vector<bool> previous_;
};

/// Gradient of the objective at each row of x (same shape as x).
using GradientFn = std::function<Points(const Points& x)>;

/// Rows of the few-shot inputs in descending-y order (stable), cycled to Q rows.
Points top_q_init(const ContextSet& few_shot, std::size_t q);

/// `steps` updates x <- clip(x + step_size * grad(x)) starting from `init`.
Points gradient_ascent(const Points& init, std::size_t steps, double step_size, const Interval& box,
                       const GradientFn& grad);

struct AscentConfig {
  std::size_t steps = 200;
  double step_size = 1e-2;
};

/// Ascends the frozen model's prediction through target inputs initialized
/// from the top-Q few-shot points, with the few-shot set as context.
template <typename T>
Points tnp_ed_optimize(const ContextSet& few_shot, const TnpEdModel<T>& model, const AscentConfig& ascent,
                       std::size_t q, const Interval& box);

enum class ReduceMode { kSingle, kMin, kMean };
std::string_view to_string(ReduceMode mode);
ReduceMode parse_reduce_mode(std::string_view name);

struct SurrogateConfig {
  std::size_t ensemble_size = 5;
  std::size_t hidden = 256;
  std::size_t hidden_layers = 2;
  std::size_t epochs = 500;
  double lr = 1e-3;
  double weight_decay = 0.0;
  ReduceMode reduce = ReduceMode::kMean;

  /// Throws ConfigError, including Single with ensemble_size != 1.
  void validate() const;
};

/// Forward models d_x -> 1 trained on standardized y; predictions are
/// reported on the original y scale.
class SurrogateEnsemble {
 public:
  SurrogateEnsemble(const SurrogateConfig& config, std::size_t d_x, std::uint64_t seed);

  std::size_t size() const { return members_.size(); }
  const SurrogateConfig& config() const { return config_; }
  ReduceMode reduce_mode() const { return config_.reduce; }
  void set_reduce_mode(ReduceMode mode);

  /// Member predictions [Q, E] on the original y scale.
  Eigen::MatrixXd member_predictions(const Points& x) const;
  /// Reduced objective per row.
  Values predict(const Points& x) const;
  /// d(reduced objective)/dx per row; Min follows the lowest member, ties to
  /// the lower index.
  Points gradient(const Points& x) const;

  const nn::ParameterStore<double>& member_parameters(std::size_t e) const { return members_[e].store; }

  /// Final training loss of each member (standardized scale).
  std::vector<double> final_losses;
  double y_mean = 0.0;
  double y_std = 1.0;

 private:
  friend SurrogateEnsemble surrogate_train(const ContextSet& few_shot, const SurrogateConfig& config,
                                           std::uint64_t seed);
  struct Member {
    nn::ParameterStore<double> store;
    nn::Mlp<double> net;
  };
  nn::Tensor<double> reduced_sum(const nn::Tensor<double>& x, const Eigen::MatrixXd& member_values) const;

  SurrogateConfig config_;
  std::size_t d_x_ = 0;
  std::vector<Member> members_;
};

/// Full-batch AdamW on all few-shot pairs for config.epochs epochs, one seed
/// stream per member. Requires at least 2 points; constant y only warns.
SurrogateEnsemble surrogate_train(const ContextSet& few_shot, const SurrogateConfig& config, std::uint64_t seed);

Points grad_ascent_optimize(const SurrogateEnsemble& ensemble, const ContextSet& few_shot,
                            const AscentConfig& ascent, std::size_t q, const Interval& box);

}  // namespace expt::baselines
