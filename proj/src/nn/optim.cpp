#include "expt/nn/optim.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "expt/errors.hpp"

namespace expt::nn {

double WarmupCosine::lr_at(std::int64_t step) const {
  if (step < 0) throw InputError("lr_at: negative step");
  if (step < warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
  if (step <= warmup + anneal) {
    if (anneal == 0) return peak;
    const double progress = static_cast<double>(step - warmup) / static_cast<double>(anneal);
    return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  }
  return 0.0;
}

template <typename T>
OptimizerState<T>::OptimizerState(const AdamWConfig& cfg, std::span<const Tensor<T>> params) : config(cfg) {
  for (const auto& p : params) {
    first_moment.emplace_back(p.size(), T(0));
    second_moment.emplace_back(p.size(), T(0));
  }
}

template <typename T>
void adamw_step(std::span<Tensor<T>> params, OptimizerState<T>& state, double lr) {
  if (params.size() != state.first_moment.size())
    throw InputError("adamw_step: " + std::to_string(params.size()) + " parameters but state tracks " +
                     std::to_string(state.first_moment.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size() != state.first_moment[i].size())
      throw InputError("adamw_step: moment shape mismatch for parameter " + std::to_string(i));
  }
  state.step += 1;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  const T decay = static_cast<T>(1.0 - lr * c.weight_decay);
  const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i].values();
    auto grad = params[i].grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const T g = grad.empty() ? T(0) : grad[j];
      m[j] = b1 * m[j] + (T(1) - b1) * g;
      v[j] = b2 * v[j] + (T(1) - b2) * g * g;
      const double mhat = static_cast<double>(m[j]) / bc1;
      const double vhat = static_cast<double>(v[j]) / bc2;
      theta[j] = theta[j] * decay - static_cast<T>(lr * mhat / (std::sqrt(vhat) + c.eps));
    }
  }
}

template <typename T>
double clip_grad_norm(std::span<Tensor<T>> params, double max_norm) {
  double sq = 0;
  for (const auto& p : params)
    for (const T g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    for (auto& p : params)
      if (!p.grad().empty())
        for (T& g : p.mutable_grad()) g *= s;
  }
  return norm;
}

template struct OptimizerState<float>;
template struct OptimizerState<double>;
template void adamw_step<float>(std::span<Tensor<float>>, OptimizerState<float>&, double);
template void adamw_step<double>(std::span<Tensor<double>>, OptimizerState<double>&, double);
template double clip_grad_norm<float>(std::span<Tensor<float>>, double);
template double clip_grad_norm<double>(std::span<Tensor<double>>, double);

}  // namespace expt::nn
