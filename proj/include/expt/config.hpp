#pragma once

// Run configuration: flat dotted `key = value` text with presets, defaults
// for every key, strict validation and a stable content hash.

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "expt/baselines.hpp"
#include "expt/eval.hpp"
#include "expt/model.hpp"
#include "expt/synthfn.hpp"
#include "expt/train.hpp"

namespace expt::config {

using Value = std::variant<bool, std::int64_t, double, std::string, std::vector<double>, std::vector<std::int64_t>,
                           std::vector<std::string>>;

enum class ValueType { kBool, kInt, kReal, kString, kRealList, kIntList, kStringList };

struct KeyInfo {
  std::string key;
  ValueType type;
  std::string default_text;
  std::string doc;
};

/// Every recognized key with its default, in documentation order.
const std::vector<KeyInfo>& key_table();

/// Names of the shipped presets.
std::vector<std::string> preset_names();
/// key -> value text applied on top of the defaults when `preset` selects it.
const std::map<std::string, std::string>& preset_overrides(const std::string& name);

enum class ModelKind { kExPT, kTnpEd };
enum class Precision { kFloat32, kFloat64 };

struct RunConfig {
  std::string preset;
  std::uint64_t seed = 0;
  std::string output_dir;
  std::string run_id;
  std::vector<std::int64_t> eval_checkpoints;
  Precision precision = Precision::kFloat32;

  synthfn::GeneratorConfig generator;
  std::string pool_path;
  ModelKind model_kind = ModelKind::kExPT;
  model::ExPTConfig model;
  model::TrainConfig train;

  std::size_t q = 256;
  std::size_t reference_size = 20000;
  eval::FewShotMode few_shot;
  eval::Method method = eval::Method::kExPT;
  double oracle_lengthscale = 0.0;
  double oracle_scale = 1.0;
  double oracle_period = 0.0;
  eval::Interpolation oracle_interp = eval::Interpolation::kNearest;
  std::string y_star;

  baselines::SurrogateConfig surrogate;
  baselines::AscentConfig ascent;

  std::vector<std::int64_t> sweep_seeds;
  std::vector<synthfn::KernelKind> sweep_kernels;
  std::vector<eval::Method> sweep_methods;
  std::vector<std::string> sweep_modes;

  /// Effective value text of every key, sorted.
  std::map<std::string, std::string> values;
  /// Hex SHA-256 over the canonical text minus `run.output_dir` and `run.id`.
  std::string hash;
  /// Hex SHA-256 over the generator.* keys only.
  std::string generator_hash;

  /// Every key except `preset`, one `key = value` line each, sorted.
  std::string canonical_text() const;
  /// Held-out oracle kernel for `kind`; lengthscale 0 selects sqrt(d).
  synthfn::KernelSpec oracle_kernel(synthfn::KernelKind kind) const;
  model::TrainConfig train_config(std::uint64_t seed) const;
  baselines::TnpEdConfig tnp_ed_config() const { return {model.d_x, model.encoder}; }
};

/// Parses config text. `overrides` are `key=value` strings applied last.
/// Throws ConfigError naming the key on unknown keys, type mismatches and
/// invariant violations.
RunConfig parse_config(std::string_view text, const std::vector<std::string>& overrides = {},
                       const std::string& origin = "<config>");

/// Reads `path` (IoError when unreadable) and parses it.
RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {});

std::string sha256_hex(std::string_view data);

/// Documented default table, one row per key.
std::string describe_defaults();

}  // namespace expt::config
