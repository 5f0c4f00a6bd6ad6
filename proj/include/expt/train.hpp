#pragma once

// Synthetic pretraining loop shared by ExPT and the forward baseline.

#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <span>
#include <sstream>
#include <vector>

#include "expt/errors.hpp"
#include "expt/nn/layers.hpp"
#include "expt/nn/optim.hpp"
#include "expt/rng.hpp"
#include "expt/synthfn.hpp"

namespace expt::model {

struct TrainConfig {
  std::int64_t iterations = 10000;
  std::size_t batch_functions = 128;
  nn::WarmupCosine schedule;
  nn::AdamWConfig adamw;
  std::int64_t checkpoint_every = 1000;
  /// Joint gradient-norm clip; 0 disables.
  double grad_clip = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainRecord {
  std::int64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
};

/// The `count` episodes of one iteration. Function b of iteration `step`
/// draws from Rng::stream(seed, step, b) so batches can be generated in
/// parallel and replayed exactly.
std::vector<synthfn::Episode> sample_batch(const synthfn::GeneratorConfig& gen, std::size_t count,
                                           std::uint64_t seed, std::int64_t step, const synthfn::Points* pool);

/// Runs iterations state.step .. cfg.iterations-1. Each iteration samples a
/// fresh batch, averages the model loss over it and applies one AdamW update
/// at lr_at(step). `on_checkpoint(step)` fires every checkpoint_every
/// completed steps and once at the end (also when no step ran).
template <typename Model, typename T>
std::vector<TrainRecord> pretrain(const TrainConfig& cfg, const synthfn::GeneratorConfig& gen, Model& model,
                                  nn::OptimizerState<T>& state, const synthfn::Points* pool,
                                  const std::function<void(std::int64_t)>& on_checkpoint) {
  cfg.validate();
  gen.validate();
  std::vector<nn::Tensor<T>> params = model.parameters().tensors();
  std::vector<TrainRecord> log;
  std::int64_t last_emitted = -1;
  while (state.step < cfg.iterations) {
    const std::int64_t step = state.step;
    auto batch = sample_batch(gen, cfg.batch_functions, cfg.seed, step, pool);
    Rng rng = Rng::stream(cfg.seed, static_cast<std::uint64_t>(step), 0x7472616eULL);
    const nn::ForwardContext ctx{true, &rng};
    model.parameters().zero_grad();
    auto diagnostic = [&](const std::string& what) {
      std::ostringstream msg;
      msg << what << " at iteration " << step << "; generator seeds:";
      for (const auto& ep : batch) msg << ' ' << ep.seed;
      return msg.str();
    };
    nn::Tensor<T> loss = model.batch_loss(std::span<const synthfn::Episode>(batch), rng, ctx);
    if (!std::isfinite(static_cast<double>(loss.item()))) throw NumericError(diagnostic("non-finite loss"));
    try {
      nn::backward(loss);
    } catch (const NumericError& e) {
      throw NumericError(diagnostic(e.what()));
    }
    if (cfg.grad_clip > 0) nn::clip_grad_norm<T>(params, cfg.grad_clip);
    const double lr = cfg.schedule.lr_at(step);
    nn::adamw_step<T>(params, state, lr);
    log.push_back({state.step, static_cast<double>(loss.item()), lr});
    if (on_checkpoint && (state.step % cfg.checkpoint_every == 0 || state.step == cfg.iterations)) {
      on_checkpoint(state.step);
      last_emitted = state.step;
    }
  }
  if (on_checkpoint && last_emitted != state.step) on_checkpoint(state.step);
  return log;
}

}  // namespace expt::model
