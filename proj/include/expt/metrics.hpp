#pragma once

// Metrics CSV sink and the across-seed report.

#include <cstdint>
#include <string>
#include <vector>

namespace expt::metrics {

/// One evaluation of one (task, method, mode, seed, checkpoint) cell.
struct MetricsRow {
  std::string run_id;
  std::string task;
  std::string kernel_kind;
  std::uint64_t seed = 0;
  std::int64_t checkpoint_step = 0;
  std::size_t q = 0;
  double score_median = 0.0;
  double score_max = 0.0;
  double score_mean = 0.0;
  double few_shot_best = 0.0;
  double wall_time_s = 0.0;
  std::string method;
  std::string mode;
  std::string generator_hash;
  std::string config_hash;

  /// Equality of every field except wall_time_s.
  bool same_result(const MetricsRow& other) const;
};

/// Column names in field order.
const std::vector<std::string>& header();
std::string format_row(const MetricsRow& row);
MetricsRow parse_row(const std::vector<std::string>& cells);

/// Appends rows to the CSV at `path`, writing the header only when the file
/// is new. The new content is written to a temporary file and renamed over
/// the original. Throws IoError on failure and when an existing header differs.
void emit_metrics(const std::vector<MetricsRow>& rows, const std::string& path);

/// Empty when the file does not exist.
std::vector<MetricsRow> read_metrics(const std::string& path);

struct Summary {
  double mean = 0.0;
  double stddev = 0.0;
};

/// Mean and population standard deviation.
Summary summarize(const std::vector<double>& values);
/// "0.620 ± 0.016"
std::string format_summary(const Summary& s, int digits = 3);

struct AggregateRow {
  std::string task;
  std::string method;
  std::string mode;
  std::int64_t checkpoint_step = 0;
  std::size_t seeds = 0;
  Summary median, max, mean, few_shot_best;
};

/// Groups by (task, method, mode, checkpoint_step) in first-appearance order.
/// Throws InputError when a group mixes generator hashes unless `force`.
std::vector<AggregateRow> aggregate(const std::vector<MetricsRow>& rows, bool force);

/// Plain-text table of aggregate rows.
std::string format_report(const std::vector<AggregateRow>& rows);

}  // namespace expt::metrics
