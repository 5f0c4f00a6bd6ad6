#include "expt/train.hpp"

namespace expt::model {

void TrainConfig::validate() const {
  if (iterations < 0) throw ConfigError("train.iterations must be non-negative");
  if (batch_functions == 0) throw ConfigError("train.batch_functions must be positive");
  if (checkpoint_every <= 0) throw ConfigError("run.checkpoint_every must be positive");
  if (!(schedule.peak >= 0.0)) throw ConfigError("optim.lr must be non-negative");
  if (schedule.warmup < 0 || schedule.anneal < 0) throw ConfigError("optim.warmup/anneal must be non-negative");
  if (!(adamw.beta1 >= 0.0 && adamw.beta1 < 1.0)) throw ConfigError("optim.beta1 must lie in [0, 1)");
  if (!(adamw.beta2 >= 0.0 && adamw.beta2 < 1.0)) throw ConfigError("optim.beta2 must lie in [0, 1)");
  if (!(adamw.eps > 0.0)) throw ConfigError("optim.eps must be positive");
  if (!(adamw.weight_decay >= 0.0)) throw ConfigError("optim.weight_decay must be non-negative");
  if (!(grad_clip >= 0.0)) throw ConfigError("optim.grad_clip must be non-negative");
}

std::vector<synthfn::Episode> sample_batch(const synthfn::GeneratorConfig& gen, std::size_t count,
                                           std::uint64_t seed, std::int64_t step, const synthfn::Points* pool) {
  std::vector<synthfn::Episode> batch(count);
  std::exception_ptr failure;
  const auto n = static_cast<std::ptrdiff_t>(count);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t b = 0; b < n; ++b) {
    try {
      Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(b));
      synthfn::GeneratorSpec spec;
      if (gen.family == synthfn::GeneratorFamily::kGaussianProcess)
        spec = synthfn::random_kernel_spec(gen, rng);
      else
        spec = synthfn::MlpGeneratorSpec::random(rng);
      batch[static_cast<std::size_t>(b)] = synthfn::draw_episode(gen, spec, pool, rng);
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return batch;
}

}  // namespace expt::model
