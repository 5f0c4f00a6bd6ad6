#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "expt/nn/tensor.hpp"

namespace expt::nn {

/// Linear warmup from 0 to `peak` over `warmup` steps, then half-cosine
/// decay to 0 over `anneal` steps; 0 afterwards.
struct WarmupCosine {
  double peak = 5e-4;
  std::int64_t warmup = 1000;
  std::int64_t anneal = 9000;

  double lr_at(std::int64_t step) const;
};

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
  double weight_decay = 1e-2;
};

template <typename T>
struct OptimizerState {
  AdamWConfig config;
  std::int64_t step = 0;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;

  OptimizerState() = default;
  OptimizerState(const AdamWConfig& cfg, std::span<const Tensor<T>> params);
};

/// One decoupled-weight-decay Adam update using the gradients attached to
/// `params`: theta <- theta - lr*wd*theta, then the bias-corrected Adam step.
/// Parameters without a gradient buffer are treated as having zero gradient.
template <typename T>
void adamw_step(std::span<Tensor<T>> params, OptimizerState<T>& state, double lr);

/// Rescales all gradients so their joint L2 norm is at most max_norm.
/// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(std::span<Tensor<T>> params, double max_norm);

}  // namespace expt::nn
