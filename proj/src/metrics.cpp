#include "expt/metrics.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <sstream>

#include "expt/csv.hpp"
#include "expt/errors.hpp"

namespace expt::metrics {

namespace {

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

std::string header_line() {
  std::string line;
  for (const auto& h : header()) line += (line.empty() ? "" : ",") + h;
  return line;
}

template <typename I>
I parse_integer(const std::string& text, const char* field) {
  I v{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw InputError(std::string("metrics: bad ") + field + " '" + text + "'");
  return v;
}

double parse_real(const std::string& text, const char* field) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw InputError(std::string("metrics: bad ") + field + " '" + text + "'");
  return v;
}

void check_cell(const std::string& s, const char* field) {
  if (s.find_first_of(",\n\r\"") != std::string::npos)
    throw InputError(std::string("metrics: ") + field + " must not contain commas, quotes or newlines");
}

}  // namespace

bool MetricsRow::same_result(const MetricsRow& o) const {
  return run_id == o.run_id && task == o.task && kernel_kind == o.kernel_kind && seed == o.seed &&
         checkpoint_step == o.checkpoint_step && q == o.q && score_median == o.score_median &&
         score_max == o.score_max && score_mean == o.score_mean && few_shot_best == o.few_shot_best &&
         method == o.method && mode == o.mode && generator_hash == o.generator_hash && config_hash == o.config_hash;
}

const std::vector<std::string>& header() {
  static const std::vector<std::string> h = {
      "run_id",     "task",         "kernel_kind",   "seed",   "checkpoint_step", "q",
      "score_median", "score_max",  "score_mean",    "few_shot_best", "wall_time_s", "method",
      "mode",       "generator_hash", "config_hash"};
  return h;
}

std::string format_row(const MetricsRow& r) {
  check_cell(r.run_id, "run_id");
  check_cell(r.task, "task");
  check_cell(r.kernel_kind, "kernel_kind");
  check_cell(r.method, "method");
  check_cell(r.mode, "mode");
  for (double v : {r.score_median, r.score_max, r.score_mean, r.few_shot_best, r.wall_time_s})
    if (!std::isfinite(v)) throw NumericError("metrics: non-finite value in row for task " + r.task);
  std::ostringstream out;
  out << r.run_id << ',' << r.task << ',' << r.kernel_kind << ',' << r.seed << ',' << r.checkpoint_step << ',' << r.q
      << ',' << csv::format_double(r.score_median) << ',' << csv::format_double(r.score_max) << ','
      << csv::format_double(r.score_mean) << ',' << csv::format_double(r.few_shot_best) << ','
      << csv::format_double(r.wall_time_s) << ',' << r.method << ',' << r.mode << ',' << r.generator_hash << ','
      << r.config_hash;
  return out.str();
}

MetricsRow parse_row(const std::vector<std::string>& c) {
  if (c.size() != header().size())
    throw InputError("metrics: expected " + std::to_string(header().size()) + " columns, got " +
                     std::to_string(c.size()));
  MetricsRow r;
  r.run_id = c[0];
  r.task = c[1];
  r.kernel_kind = c[2];
  r.seed = parse_integer<std::uint64_t>(c[3], "seed");
  r.checkpoint_step = parse_integer<std::int64_t>(c[4], "checkpoint_step");
  r.q = parse_integer<std::size_t>(c[5], "q");
  r.score_median = parse_real(c[6], "score_median");
  r.score_max = parse_real(c[7], "score_max");
  r.score_mean = parse_real(c[8], "score_mean");
  r.few_shot_best = parse_real(c[9], "few_shot_best");
  r.wall_time_s = parse_real(c[10], "wall_time_s");
  r.method = c[11];
  r.mode = c[12];
  r.generator_hash = c[13];
  r.config_hash = c[14];
  return r;
}

void emit_metrics(const std::vector<MetricsRow>& rows, const std::string& path) {
  std::string appended;
  for (const auto& r : rows) appended += format_row(r) + "\n";
  std::lock_guard lock(sink_mutex());
  std::string existing;
  if (std::filesystem::exists(path)) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read metrics file " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    existing = buf.str();
    const auto eol = existing.find('\n');
    std::string first = existing.substr(0, eol);
    if (!first.empty() && first.back() == '\r') first.pop_back();
    if (!existing.empty() && first != header_line())
      throw IoError("metrics file " + path + " has an unexpected header");
    if (!existing.empty() && existing.back() != '\n') existing += '\n';
  }
  if (existing.empty()) existing = header_line() + "\n";
  const std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out << existing << appended;
    if (!out) throw IoError("short write to " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

std::vector<MetricsRow> read_metrics(const std::string& path) {
  std::vector<MetricsRow> rows;
  if (!std::filesystem::exists(path)) return rows;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read metrics file " + path);
  std::string line;
  bool first = true;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line != header_line()) throw InputError(path + ": unexpected metrics header");
      continue;
    }
    try {
      rows.push_back(parse_row(csv::split_line(line)));
    } catch (const InputError& e) {
      throw InputError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

Summary summarize(const std::vector<double>& values) {
  Summary s;
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(sq / static_cast<double>(values.size()));
  return s;
}

std::string format_summary(const Summary& s, int digits) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(digits) << s.mean << " ± " << s.stddev;
  return out.str();
}

std::vector<AggregateRow> aggregate(const std::vector<MetricsRow>& rows, bool force) {
  struct Group {
    AggregateRow row;
    std::vector<double> median, max, mean, best;
    std::string generator_hash;
  };
  std::vector<Group> groups;
  std::map<std::string, std::size_t> index;
  for (const auto& r : rows) {
    const std::string key = r.task + '\x1f' + r.method + '\x1f' + r.mode + '\x1f' + std::to_string(r.checkpoint_step);
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, groups.size()).first;
      Group g;
      g.row.task = r.task;
      g.row.method = r.method;
      g.row.mode = r.mode;
      g.row.checkpoint_step = r.checkpoint_step;
      g.generator_hash = r.generator_hash;
      groups.push_back(std::move(g));
    }
    Group& g = groups[it->second];
    if (g.generator_hash != r.generator_hash && !force)
      throw InputError("report: rows for task " + r.task + " / " + r.method + " mix generator hashes " +
                       g.generator_hash.substr(0, 12) + " and " + r.generator_hash.substr(0, 12) +
                       " (use --force to aggregate anyway)");
    g.median.push_back(r.score_median);
    g.max.push_back(r.score_max);
    g.mean.push_back(r.score_mean);
    g.best.push_back(r.few_shot_best);
  }
  std::vector<AggregateRow> out;
  for (auto& g : groups) {
    g.row.seeds = g.median.size();
    g.row.median = summarize(g.median);
    g.row.max = summarize(g.max);
    g.row.mean = summarize(g.mean);
    g.row.few_shot_best = summarize(g.best);
    out.push_back(g.row);
  }
  return out;
}

std::string format_report(const std::vector<AggregateRow>& rows) {
  std::ostringstream out;
  out << std::left << std::setw(22) << "task" << std::setw(11) << "method" << std::setw(14) << "mode" << std::setw(8)
      << "step" << std::setw(7) << "seeds" << std::setw(17) << "D(best)" << std::setw(17) << "median"
      << std::setw(17) << "max"
      << "mean\n";
  for (const auto& r : rows) {
    // Column widths count bytes; the plus-minus sign takes two.
    out << std::left << std::setw(22) << r.task << std::setw(11) << r.method << std::setw(14) << r.mode << std::setw(8)
        << r.checkpoint_step << std::setw(7) << r.seeds << std::setw(18) << format_summary(r.few_shot_best)
        << std::setw(18) << format_summary(r.median) << std::setw(18) << format_summary(r.max)
        << format_summary(r.mean) << '\n';
  }
  return out.str();
}

}  // namespace expt::metrics
