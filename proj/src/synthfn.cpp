#include "expt/synthfn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "expt/csv.hpp"
#include "expt/errors.hpp"

namespace expt::synthfn {
namespace {

constexpr double kJitterStart = 1e-6;
constexpr double kJitterMax = 1e-2;

void require_finite(const Points& X, const char* where) {
  if (!X.allFinite()) throw InputError(std::string(where) + ": non-finite input coordinates");
}

std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
  return p;
}

void fill_lower(Eigen::MatrixXd& K, const Points& X, const KernelSpec& spec) {
  const auto n = static_cast<std::ptrdiff_t>(X.rows());
  const auto d = static_cast<std::size_t>(X.cols());
#pragma omp parallel for schedule(dynamic, 64)
  for (std::ptrdiff_t j = 0; j < n; ++j) {
    for (std::ptrdiff_t i = j; i < n; ++i) K(i, j) = kernel_value(spec, X.row(i).data(), X.row(j).data(), d);
  }
}

Values draw_with_cholesky(const Points& X, const KernelSpec& spec, Rng& rng) {
  const auto n = X.rows();
  Values eps(n);
  for (Eigen::Index i = 0; i < n; ++i) eps[i] = rng.normal();
  const double unit = std::max(spec.scale * spec.scale, 1.0);
  Eigen::MatrixXd K(n, n);
  double jitter = kJitterStart * unit;
  for (;; jitter *= 10.0) {
    fill_lower(K, X, spec);
    K.diagonal().array() += jitter;
    Eigen::LLT<Eigen::Ref<Eigen::MatrixXd>, Eigen::Lower> llt(K);
    if (llt.info() == Eigen::Success) return K.triangularView<Eigen::Lower>() * eps;
    if (jitter >= kJitterMax * unit * (1 - 1e-9)) break;
  }
  std::ostringstream msg;
  msg << "Cholesky failed for " << spec.describe() << " on " << n << " points; last jitter " << jitter;
  throw DegenerateKernelError(msg.str(), jitter);
}

double init_draw(MlpInit init, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double in = static_cast<double>(fan_in), out = static_cast<double>(fan_out);
  switch (init) {
    case MlpInit::kUniform: return rng.uniform(-1.0, 1.0);
    case MlpInit::kNormal: return rng.normal();
    case MlpInit::kXavierUniform: {
      const double b = std::sqrt(6.0 / (in + out));
      return rng.uniform(-b, b);
    }
    case MlpInit::kXavierNormal: return rng.normal() * std::sqrt(2.0 / (in + out));
    case MlpInit::kKaimingUniform: {
      const double b = std::sqrt(6.0 / in);
      return rng.uniform(-b, b);
    }
    case MlpInit::kKaimingNormal: return rng.normal() * std::sqrt(2.0 / in);
  }
  return 0.0;
}

}  // namespace

std::string_view to_string(KernelKind kind) {
  switch (kind) {
    case KernelKind::kRbf: return "rbf";
    case KernelKind::kMatern52: return "matern52";
    case KernelKind::kLinear: return "linear";
    case KernelKind::kCosine: return "cosine";
    case KernelKind::kPeriodic: return "periodic";
  }
  return "unknown";
}

KernelKind parse_kernel_kind(std::string_view name) {
  for (auto k : {KernelKind::kRbf, KernelKind::kMatern52, KernelKind::kLinear, KernelKind::kCosine,
                 KernelKind::kPeriodic})
    if (to_string(k) == name) return k;
  throw ConfigError("unknown kernel kind '" + std::string(name) + "'");
}

void KernelSpec::validate() const {
  if (!(lengthscale > 0.0) || !std::isfinite(lengthscale))
    throw ConfigError("kernel lengthscale must be positive, got " + std::to_string(lengthscale));
  if (!(scale >= 0.0) || !std::isfinite(scale))
    throw ConfigError("kernel scale must be non-negative, got " + std::to_string(scale));
  if (!(period >= 0.0)) throw ConfigError("kernel period must be positive, got " + std::to_string(period));
  const int k = static_cast<int>(kind);
  if (k < 0 || k > static_cast<int>(KernelKind::kPeriodic)) throw ConfigError("unknown kernel kind");
}

std::string KernelSpec::describe() const {
  std::ostringstream s;
  s << to_string(kind) << "(lengthscale=" << lengthscale << ", scale=" << scale;
  if (kind == KernelKind::kPeriodic) s << ", period=" << effective_period();
  s << ")";
  return s.str();
}

double kernel_value(const KernelSpec& spec, const double* x, const double* y, std::size_t dim) {
  const double s2 = spec.scale * spec.scale;
  const double l = spec.lengthscale;
  switch (spec.kind) {
    case KernelKind::kRbf: {
      double r2 = 0;
      for (std::size_t c = 0; c < dim; ++c) r2 += (x[c] - y[c]) * (x[c] - y[c]);
      return s2 * std::exp(-r2 / (2.0 * l * l));
    }
    case KernelKind::kMatern52: {
      double r2 = 0;
      for (std::size_t c = 0; c < dim; ++c) r2 += (x[c] - y[c]) * (x[c] - y[c]);
      const double a = std::sqrt(5.0 * r2) / l;
      return s2 * (1.0 + a + a * a / 3.0) * std::exp(-a);
    }
    case KernelKind::kLinear: {
      double dot = 0;
      for (std::size_t c = 0; c < dim; ++c) dot += x[c] * y[c];
      return s2 * dot;
    }
    case KernelKind::kCosine: {
      // Average of per-coordinate cosine kernels: positive semidefinite in
      // any dimension, and cos(|x - x'| / l) in one dimension.
      double acc = 0;
      for (std::size_t c = 0; c < dim; ++c) acc += std::cos((x[c] - y[c]) / l);
      return s2 * acc / static_cast<double>(dim);
    }
    case KernelKind::kPeriodic: {
      // Product of per-coordinate periodic kernels.
      const double p = spec.effective_period();
      double acc = 0;
      for (std::size_t c = 0; c < dim; ++c) {
        const double s = std::sin(std::numbers::pi * std::abs(x[c] - y[c]) / p);
        acc += s * s;
      }
      return s2 * std::exp(-2.0 * acc / (l * l));
    }
  }
  throw ConfigError("unknown kernel kind");
}

Eigen::MatrixXd kernel_matrix(const Points& X, const KernelSpec& spec) {
  spec.validate();
  require_finite(X, "kernel_matrix");
  Eigen::MatrixXd K(X.rows(), X.rows());
  fill_lower(K, X, spec);
  K.triangularView<Eigen::StrictlyUpper>() = K.transpose();
  return K;
}

Values sample_gp_values(const Points& X, const KernelSpec& spec, Rng& rng) {
  spec.validate();
  require_finite(X, "sample_gp_values");
  if (X.rows() < 1) throw InputError("sample_gp_values: need at least one point");
  return draw_with_cholesky(X, spec, rng);
}

Values sample_gp_reference(const Points& X, const KernelSpec& spec, Rng& rng) {
  spec.validate();
  require_finite(X, "sample_gp_reference");
  const auto d = X.cols();
  if (spec.kind == KernelKind::kLinear) {
    Values w(d);
    for (Eigen::Index c = 0; c < d; ++c) w[c] = rng.normal();
    return spec.scale * (X * w);
  }
  if (spec.kind == KernelKind::kCosine) {
    Values u(d), v(d);
    for (Eigen::Index c = 0; c < d; ++c) {
      u[c] = rng.normal();
      v[c] = rng.normal();
    }
    const Points arg = X / spec.lengthscale;
    Values f = arg.array().cos().matrix() * u + arg.array().sin().matrix() * v;
    return f * (spec.scale / std::sqrt(static_cast<double>(d)));
  }
  return sample_gp_values(X, spec, rng);
}

void GeneratorConfig::validate() const {
  if (dimension == 0) throw ConfigError("generator.dimension must be positive");
  if (points_per_function == 0) throw ConfigError("generator.points_per_function must be positive");
  if (context_size == 0 || context_size >= points_per_function)
    throw ConfigError("generator.context_size must satisfy 0 < m < points_per_function");
  if (!(lengthscale_range.lo > 0.0) || lengthscale_range.lo > lengthscale_range.hi)
    throw ConfigError("generator.lengthscale_range must satisfy 0 < lo <= hi");
  if (!(scale_range.lo >= 0.0) || scale_range.lo > scale_range.hi)
    throw ConfigError("generator.scale_range must satisfy 0 <= lo <= hi");
  if (!(box.lo < box.hi)) throw ConfigError("generator.box must satisfy lo < hi");
  if (!(input_noise_std >= 0.0)) throw ConfigError("generator.input_noise_std must be non-negative");
  if (!(pool_subsample_ratio > 0.0 && pool_subsample_ratio <= 1.0))
    throw ConfigError("generator.pool_subsample_ratio must lie in (0, 1]");
}

KernelSpec random_kernel_spec(const GeneratorConfig& config, Rng& rng) {
  KernelSpec spec;
  spec.kind = config.kernel;
  spec.lengthscale = rng.uniform(config.lengthscale_range.lo, config.lengthscale_range.hi);
  spec.scale = rng.uniform(config.scale_range.lo, config.scale_range.hi);
  return spec;
}

void MlpGeneratorSpec::validate() const {
  if (std::find(std::begin(kHiddenSizes), std::end(kHiddenSizes), hidden_size) == std::end(kHiddenSizes))
    throw ConfigError("mlp generator hidden_size " + std::to_string(hidden_size) + " not in {16,...,1024}");
  if (std::find(std::begin(kDepths), std::end(kDepths), depth) == std::end(kDepths))
    throw ConfigError("mlp generator depth " + std::to_string(depth) + " not in {2,3,4,5,6}");
  const int k = static_cast<int>(init);
  if (k < 0 || k > static_cast<int>(MlpInit::kKaimingNormal)) throw ConfigError("unknown mlp init method");
}

std::string MlpGeneratorSpec::describe() const {
  static constexpr const char* kNames[] = {"uniform",        "normal",          "xavier-uniform",
                                           "xavier-normal",  "kaiming-uniform", "kaiming-normal"};
  std::ostringstream s;
  s << "mlp(init=" << kNames[static_cast<int>(init)] << ", hidden=" << hidden_size << ", depth=" << depth
    << ", seed=" << seed << ")";
  return s.str();
}

MlpGeneratorSpec MlpGeneratorSpec::random(Rng& rng) {
  MlpGeneratorSpec spec;
  spec.init = static_cast<MlpInit>(rng.below(6));
  spec.hidden_size = kHiddenSizes[rng.below(std::size(kHiddenSizes))];
  spec.depth = kDepths[rng.below(std::size(kDepths))];
  spec.seed = rng.next_u64();
  return spec;
}

Values mlp_function_values(const Points& X, const MlpGeneratorSpec& spec) {
  spec.validate();
  require_finite(X, "mlp_function_values");
  Rng rng(spec.seed);
  Eigen::MatrixXd h = X;
  auto layer = [&](std::size_t fan_in, std::size_t fan_out) {
    Eigen::MatrixXd W(fan_in, fan_out);
    Eigen::RowVectorXd b(fan_out);
    for (Eigen::Index i = 0; i < W.rows(); ++i)
      for (Eigen::Index j = 0; j < W.cols(); ++j) W(i, j) = init_draw(spec.init, fan_in, fan_out, rng);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (Eigen::Index j = 0; j < b.size(); ++j) b[j] = rng.uniform(-bound, bound);
    Eigen::MatrixXd out = h * W;
    out.rowwise() += b;
    return out;
  };
  std::size_t width = static_cast<std::size_t>(X.cols());
  for (std::size_t l = 0; l < spec.depth; ++l) {
    h = layer(width, spec.hidden_size).array().tanh().matrix();
    width = spec.hidden_size;
  }
  Values y = layer(width, 1).col(0);
  const double mu = y.mean();
  y.array() -= mu;
  const double sd = std::sqrt(y.squaredNorm() / static_cast<double>(y.size()));
  if (sd > 0.0) y /= sd;
  return y;
}

Points subsample_pool(const Points& pool, double ratio, std::uint64_t seed) {
  if (pool.rows() == 0) throw InputError("input pool is empty");
  if (!(ratio > 0.0 && ratio <= 1.0)) throw InputError("pool subsample ratio must lie in (0, 1]");
  const auto keep = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(pool.rows()) + 1e-9));
  if (keep < 1) throw InputError("pool subsample ratio leaves no rows");
  if (keep == static_cast<std::size_t>(pool.rows())) return pool;
  Rng rng = Rng::stream(seed, 0x706f6f6c);
  auto perm = permutation(static_cast<std::size_t>(pool.rows()), rng);
  perm.resize(keep);
  std::sort(perm.begin(), perm.end());
  Points out(static_cast<Eigen::Index>(keep), pool.cols());
  for (std::size_t i = 0; i < keep; ++i) out.row(static_cast<Eigen::Index>(i)) = pool.row(static_cast<Eigen::Index>(perm[i]));
  return out;
}

Points sample_inputs(const GeneratorConfig& config, const Points* pool, Rng& rng) {
  const auto n = static_cast<Eigen::Index>(config.points_per_function);
  const auto d = static_cast<Eigen::Index>(config.dimension);
  Points X(n, d);
  if (config.input_source == InputSource::kUniformBox) {
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index c = 0; c < d; ++c) X(i, c) = rng.uniform(config.box.lo, config.box.hi);
    return X;
  }
  if (pool == nullptr || pool->rows() == 0) throw InputError("sample_inputs: pool mode requires a non-empty pool");
  if (pool->cols() != d)
    throw InputError("sample_inputs: pool has " + std::to_string(pool->cols()) + " columns, expected " +
                     std::to_string(d));
  Points sub;
  const Points* source = pool;
  if (config.pool_subsample_ratio < 1.0) {
    sub = subsample_pool(*pool, config.pool_subsample_ratio, config.pool_subsample_seed);
    source = &sub;
  }
  const auto P = static_cast<std::size_t>(source->rows());
  for (Eigen::Index i = 0; i < n; ++i) {
    X.row(i) = source->row(static_cast<Eigen::Index>(rng.below(P)));
    if (config.input_noise_std > 0.0)
      for (Eigen::Index c = 0; c < d; ++c) X(i, c) += rng.normal(0.0, config.input_noise_std);
  }
  return X;
}

Episode split_episode(const GeneratorConfig& config, const Points& X, const Values& y, Rng& rng) {
  const std::size_t n = static_cast<std::size_t>(X.rows());
  const std::size_t m = config.context_size;
  if (m == 0 || m >= n) throw ConfigError("episode split needs 0 < context_size < points");
  std::vector<std::size_t> order;
  if (config.split_mode == SplitMode::kRandom) {
    order = permutation(n, rng);
  } else {
    order.resize(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return y[static_cast<Eigen::Index>(a)] < y[static_cast<Eigen::Index>(b)];
    });
  }
  Episode ep;
  ep.context_rows.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m));
  ep.target_rows.assign(order.begin() + static_cast<std::ptrdiff_t>(m), order.end());
  auto take = [&](const std::vector<std::size_t>& rows, Points& px, Values& py) {
    px.resize(static_cast<Eigen::Index>(rows.size()), X.cols());
    py.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      px.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(rows[i]));
      py[static_cast<Eigen::Index>(i)] = y[static_cast<Eigen::Index>(rows[i])];
    }
  };
  take(ep.context_rows, ep.context_x, ep.context_y);
  take(ep.target_rows, ep.target_x, ep.target_y);
  return ep;
}

Episode draw_episode(const GeneratorConfig& config, const GeneratorSpec& generator, const Points* pool, Rng& rng) {
  config.validate();
  const std::uint64_t seed = rng.next_u64();
  Rng local(seed);
  Points X = sample_inputs(config, pool, local);
  Values y;
  std::string provenance;
  if (const auto* ks = std::get_if<KernelSpec>(&generator)) {
    y = sample_gp_values(X, *ks, local);
    provenance = ks->describe();
  } else {
    const auto& ms = std::get<MlpGeneratorSpec>(generator);
    y = mlp_function_values(X, ms);
    provenance = ms.describe();
  }
  Episode ep = split_episode(config, X, y, local);
  ep.provenance = std::move(provenance);
  ep.seed = seed;
  return ep;
}

Points read_points_csv(const std::string& path) {
  const auto table = csv::read_numeric(path);
  const std::size_t d = table.header.size();
  for (std::size_t c = 0; c < d; ++c)
    if (table.header[c] != "x_" + std::to_string(c))
      throw InputError("pool csv '" + path + "': expected header x_0..x_" + std::to_string(d - 1));
  Points X(static_cast<Eigen::Index>(table.rows.size()), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < table.rows.size(); ++i)
    for (std::size_t c = 0; c < d; ++c) X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = table.rows[i][c];
  return X;
}

void write_points_csv(const std::string& path, const Points& X) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  for (Eigen::Index c = 0; c < X.cols(); ++c) out << (c ? "," : "") << "x_" << c;
  out << '\n';
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (Eigen::Index c = 0; c < X.cols(); ++c) out << (c ? "," : "") << csv::format_double(X(i, c));
    out << '\n';
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

void write_episode_csv(const std::string& path, const Episode& episode) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  const auto d = static_cast<Eigen::Index>(episode.dim());
  for (Eigen::Index c = 0; c < d; ++c) out << "x_" << c << ",";
  out << "y,role\n";
  auto rows = [&](const Points& X, const Values& y, const char* role) {
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      for (Eigen::Index c = 0; c < d; ++c) out << csv::format_double(X(i, c)) << ",";
      out << csv::format_double(y[i]) << "," << role << "\n";
    }
  };
  rows(episode.context_x, episode.context_y, "context");
  rows(episode.target_x, episode.target_y, "target");
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace expt::synthfn
