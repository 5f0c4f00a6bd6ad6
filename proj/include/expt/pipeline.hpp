#pragma once

// Run orchestration behind the CLI: pretrain, adapt (simultaneous or
// sequential), sweep and report.

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "expt/config.hpp"
#include "expt/eval.hpp"
#include "expt/metrics.hpp"
#include "expt/train.hpp"

namespace expt::pipeline {

using config::ModelKind;
using config::RunConfig;

std::string_view to_string(ModelKind kind);

/// Directory holding the checkpoints and loss log of one (model, seed)
/// pretraining run; the name carries the config hash prefix.
std::string run_directory(const RunConfig& cfg, ModelKind kind, std::uint64_t seed);
std::string checkpoint_path(const RunConfig& cfg, ModelKind kind, std::uint64_t seed, std::int64_t step);
/// Steps at which pretraining writes checkpoints.
std::vector<std::int64_t> checkpoint_steps(const RunConfig& cfg);

struct PretrainOutcome {
  std::vector<std::pair<std::int64_t, std::string>> checkpoints;
  std::string loss_csv;
  /// Iterations actually run by this call (0 when everything was on disk).
  std::int64_t iterations_run = 0;
};

/// Pretrains `kind` with `seed`, resuming from the newest checkpoint of the
/// same configuration when one exists.
PretrainOutcome pretrain(const RunConfig& cfg, ModelKind kind, std::uint64_t seed, bool verbose = false);

/// Parsed `synthetic:<kernel>` or `table:<csv>`.
struct Task {
  std::string text;
  bool synthetic = true;
  synthfn::KernelKind kernel = synthfn::KernelKind::kRbf;
  std::string table_path;

  static Task parse(const std::string& text);
};

/// Synthetic oracles are expensive to build; a cache shares them between
/// methods and checkpoints of one seed.
class OracleCache {
 public:
  eval::Oracle& get(const RunConfig& cfg, const Task& task, std::uint64_t seed);

 private:
  std::mutex mutex_;
  std::map<std::string, std::unique_ptr<eval::Oracle>> oracles_;
};

struct AdaptRequest {
  std::string task;
  std::string mode = "simultaneous";
  eval::Method method = eval::Method::kExPT;
  std::uint64_t seed = 0;
  /// Required for ExPT and TNP-ED.
  std::string checkpoint;
};

struct AdaptOutcome {
  eval::EvalReport report;
  metrics::MetricsRow row;
  std::string report_path;
};

/// Builds the oracle and few-shot set, runs the method, writes the report
/// JSON and appends a metrics row to <output_dir>/metrics.csv when `emit`.
AdaptOutcome adapt(const RunConfig& cfg, const AdaptRequest& request, OracleCache* cache = nullptr, bool emit = true);

/// Oracle and few-shot set used by adapt for (task, seed).
eval::FewShotDataset few_shot_for(const RunConfig& cfg, eval::Oracle& oracle, const Task& task, std::uint64_t seed);
eval::Oracle build_oracle(const RunConfig& cfg, const Task& task, std::uint64_t seed);

std::string metrics_path(const RunConfig& cfg);

/// Cross product of sweep.seeds x sweep.kernels x sweep.methods x
/// sweep.modes x evaluated checkpoints. Cells already present for this
/// config are skipped; rows of the same run id with another config hash are
/// a resume conflict (ConfigError). Returns the rows emitted by this call.
std::vector<metrics::MetricsRow> sweep(const RunConfig& cfg, bool verbose = false);

/// Aggregated table for the metrics file.
std::string report(const std::string& metrics_file, bool force);

/// Worker cap from EXPT_THREADS (0 when unset).
std::size_t env_threads();

}  // namespace expt::pipeline
