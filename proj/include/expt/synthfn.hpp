#pragma once

// Synthetic pretraining functions: GP prior draws over several kernels and
// randomly initialized MLPs, plus assembly of context/target episodes.

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "expt/rng.hpp"

namespace expt::synthfn {

/// Designs, one per row.
using Points = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Values = Eigen::VectorXd;

enum class KernelKind { kRbf, kMatern52, kLinear, kCosine, kPeriodic };

std::string_view to_string(KernelKind kind);
/// Accepts "rbf", "matern52", "linear", "cosine", "periodic". Throws ConfigError otherwise.
KernelKind parse_kernel_kind(std::string_view name);

struct KernelSpec {
  KernelKind kind = KernelKind::kRbf;
  double lengthscale = 1.0;
  double scale = 1.0;
  /// Periodic only; 0 selects the default period 2 * lengthscale.
  double period = 0.0;

  double effective_period() const { return period > 0.0 ? period : 2.0 * lengthscale; }
  /// Throws ConfigError when lengthscale <= 0, scale < 0 or period < 0.
  void validate() const;
  std::string describe() const;
};

/// k(x, x') for a single pair of rows.
double kernel_value(const KernelSpec& spec, const double* x, const double* y, std::size_t dim);

/// Dense covariance matrix over the rows of X. Throws InputError on
/// non-finite inputs.
Eigen::MatrixXd kernel_matrix(const Points& X, const KernelSpec& spec);

/// One draw from N(0, kernel_matrix(X) + jitter I). Jitter starts at
/// 1e-6 * max(scale^2, 1) and grows tenfold up to 1e-2 * max(scale^2, 1);
/// DegenerateKernelError reports the last jitter when every attempt fails.
Values sample_gp_values(const Points& X, const KernelSpec& spec, Rng& rng);

/// Same distribution as sample_gp_values but sized for large reference sets:
/// finite-rank kernels (Linear, Cosine) are drawn exactly through their
/// feature maps and the rest factor the covariance in place.
Values sample_gp_reference(const Points& X, const KernelSpec& spec, Rng& rng);

struct Interval {
  double lo = 0.0;
  double hi = 1.0;
};

enum class InputSource { kUniformBox, kPool };
enum class SplitMode { kRandom, kSorted };
enum class GeneratorFamily { kGaussianProcess, kRandomMlp };

struct GeneratorConfig {
  std::size_t dimension = 32;
  std::size_t points_per_function = 228;
  std::size_t context_size = 100;
  Interval lengthscale_range{5.0, 10.0};
  Interval scale_range{1.0, 10.0};
  GeneratorFamily family = GeneratorFamily::kGaussianProcess;
  KernelKind kernel = KernelKind::kRbf;
  InputSource input_source = InputSource::kUniformBox;
  Interval box{-3.0, 3.0};
  std::string pool_id;
  double input_noise_std = 0.1;
  SplitMode split_mode = SplitMode::kRandom;
  double pool_subsample_ratio = 1.0;
  std::uint64_t pool_subsample_seed = 0;

  std::size_t target_size() const { return points_per_function - context_size; }
  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Draws lengthscale and scale uniformly from the configured ranges.
KernelSpec random_kernel_spec(const GeneratorConfig& config, Rng& rng);

enum class MlpInit { kUniform, kNormal, kXavierUniform, kXavierNormal, kKaimingUniform, kKaimingNormal };

struct MlpGeneratorSpec {
  MlpInit init = MlpInit::kXavierUniform;
  std::size_t hidden_size = 64;
  std::size_t depth = 2;
  std::uint64_t seed = 0;

  static constexpr std::size_t kHiddenSizes[] = {16, 32, 64, 128, 256, 512, 1024};
  static constexpr std::size_t kDepths[] = {2, 3, 4, 5, 6};

  /// Throws ConfigError when hidden_size or depth is outside the allowed sets.
  void validate() const;
  std::string describe() const;
  static MlpGeneratorSpec random(Rng& rng);
};

using GeneratorSpec = std::variant<KernelSpec, MlpGeneratorSpec>;

struct Episode {
  Points context_x;
  Values context_y;
  Points target_x;
  Values target_y;
  /// Row indices into the sampled inputs; disjoint by construction.
  std::vector<std::size_t> context_rows;
  std::vector<std::size_t> target_rows;
  std::string provenance;
  std::uint64_t seed = 0;

  std::size_t context_size() const { return static_cast<std::size_t>(context_x.rows()); }
  std::size_t target_size() const { return static_cast<std::size_t>(target_x.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(context_x.cols()); }
};

/// Deterministic subset of floor(ratio * rows) pool rows. Throws InputError on
/// an empty pool or when the subset would be empty.
Points subsample_pool(const Points& pool, double ratio, std::uint64_t seed);

/// UniformBox: i.i.d. coordinates in the box. Pool: rows drawn with
/// replacement from the (subsampled) pool plus N(0, input_noise_std^2) noise.
Points sample_inputs(const GeneratorConfig& config, const Points* pool, Rng& rng);

/// Deterministic forward pass of the random network; outputs standardized to
/// zero mean and unit variance over the rows of X.
Values mlp_function_values(const Points& X, const MlpGeneratorSpec& spec);

Episode draw_episode(const GeneratorConfig& config, const GeneratorSpec& generator, const Points* pool, Rng& rng);

/// Splits sampled (X, y) into an episode per config.split_mode.
Episode split_episode(const GeneratorConfig& config, const Points& X, const Values& y, Rng& rng);

/// Pool CSV: header x_0,...,x_{d-1}; one design per row.
Points read_points_csv(const std::string& path);
void write_points_csv(const std::string& path, const Points& X);
/// Debug dump: x columns plus y and role (context|target).
void write_episode_csv(const std::string& path, const Episode& episode);

}  // namespace expt::synthfn
