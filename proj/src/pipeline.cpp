#include "expt/pipeline.hpp"

#include <omp.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <iomanip>
#include <optional>
#include <chrono>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "expt/baselines.hpp"
#include "expt/checkpoint.hpp"
#include "expt/csv.hpp"
#include "expt/errors.hpp"
#include "expt/log.hpp"
#include "expt/model.hpp"

namespace expt::pipeline {

namespace fs = std::filesystem;

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string short_hash(const RunConfig& cfg) { return cfg.hash.substr(0, 12); }

std::string sanitize(std::string s) {
  for (char& c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) c = '_';
  return s;
}

/// Mutex serializing construction of large oracles (dense covariance factorizations).
std::mutex& oracle_build_mutex() {
  static std::mutex m;
  return m;
}

template <typename T>
std::unique_ptr<model::ExPTModel<T>> make_expt(const RunConfig& cfg, std::uint64_t seed) {
  return std::make_unique<model::ExPTModel<T>>(cfg.model, seed);
}
template <typename T>
std::unique_ptr<baselines::TnpEdModel<T>> make_tnp(const RunConfig& cfg, std::uint64_t seed) {
  return std::make_unique<baselines::TnpEdModel<T>>(cfg.tnp_ed_config(), seed);
}

const synthfn::Points* load_pool(const RunConfig& cfg, synthfn::Points& storage) {
  if (cfg.generator.input_source != synthfn::InputSource::kPool) return nullptr;
  synthfn::Points raw = synthfn::read_points_csv(cfg.pool_path);
  if (static_cast<std::size_t>(raw.cols()) != cfg.generator.dimension)
    throw ConfigError("generator.pool_path: pool has " + std::to_string(raw.cols()) +
                      " columns but generator.dimension = " + std::to_string(cfg.generator.dimension));
  storage = synthfn::subsample_pool(raw, cfg.generator.pool_subsample_ratio, cfg.generator.pool_subsample_seed);
  return &storage;
}

void write_loss_csv(const std::string& path, std::int64_t resume_step, const std::vector<model::TrainRecord>& log) {
  std::vector<std::string> kept;
  if (resume_step > 0 && fs::exists(path)) {
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto comma = line.find(',');
      if (std::stoll(line.substr(0, comma)) <= resume_step) kept.push_back(line);
    }
  }
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out << "step,loss,lr\n";
    for (const auto& l : kept) out << l << '\n';
    for (const auto& r : log)
      out << r.step << ',' << csv::format_double(r.loss) << ',' << csv::format_double(r.lr) << '\n';
    if (!out) throw IoError("short write to " + tmp);
  }
  fs::rename(tmp, path);
}

template <typename T, typename Model, typename Factory>
PretrainOutcome pretrain_typed(const RunConfig& cfg, ModelKind kind, std::uint64_t seed, const Factory& make,
                               bool verbose) {
  PretrainOutcome out;
  std::unique_ptr<Model> owned = make();
  const std::string dir = run_directory(cfg, kind, seed);
  fs::create_directories(dir);
  out.loss_csv = (fs::path(dir) / "train_loss.csv").string();
  const auto steps = checkpoint_steps(cfg);
  auto params = owned->parameters().tensors();
  nn::OptimizerState<T> state(cfg.train.adamw, params);
  bool touched = false;

  std::int64_t resume = -1;
  for (auto it = steps.rbegin(); it != steps.rend(); ++it) {
    const std::string path = checkpoint_path(cfg, kind, seed, *it);
    if (!fs::exists(path)) continue;
    try {
      touched = true;
      const auto meta = checkpoint::load<T>(path, owned->parameters(), &state);
      if (meta.config_hash != cfg.hash || meta.step != *it) continue;
      resume = *it;
      break;
    } catch (const CheckpointError& e) {
      log::warn(std::string("ignoring unreadable checkpoint ") + path + ": " + e.what());
    }
  }
  if (resume < 0 && touched) {
    // Loads of mismatching checkpoints may have overwritten parameters.
    owned = make();
    params = owned->parameters().tensors();
    state = nn::OptimizerState<T>(cfg.train.adamw, params);
  }
  Model& model = *owned;
  const std::int64_t start = std::max<std::int64_t>(resume, 0);
  if (verbose && resume >= 0) log::info("resuming " + dir + " from step " + std::to_string(resume));

  synthfn::Points pool_storage;
  const synthfn::Points* pool = load_pool(cfg, pool_storage);
  const auto train_cfg = cfg.train_config(seed);
  auto on_checkpoint = [&](std::int64_t step) {
    if (step != 0 && step % cfg.train.checkpoint_every != 0 && step != cfg.train.iterations) return;
    const std::string path = checkpoint_path(cfg, kind, seed, step);
    if (step > start || !fs::exists(path))
      checkpoint::save<T>(path, model.parameters(), &state, {cfg.hash, std::string(to_string(kind)), step});
    if (verbose) log::info("checkpoint " + path);
  };
  if (resume < 0) on_checkpoint(0);
  const auto log = model::pretrain<Model, T>(train_cfg, cfg.generator, model, state, pool, on_checkpoint);
  out.iterations_run = static_cast<std::int64_t>(log.size());
  if (!log.empty() || resume < 0) write_loss_csv(out.loss_csv, start, log);
  for (auto s : steps) out.checkpoints.emplace_back(s, checkpoint_path(cfg, kind, seed, s));
  return out;
}

template <typename T>
PretrainOutcome pretrain_dispatch(const RunConfig& cfg, ModelKind kind, std::uint64_t seed, bool verbose) {
  if (kind == ModelKind::kExPT)
    return pretrain_typed<T, model::ExPTModel<T>>(cfg, kind, seed, [&] { return make_expt<T>(cfg, seed); }, verbose);
  return pretrain_typed<T, baselines::TnpEdModel<T>>(cfg, kind, seed, [&] { return make_tnp<T>(cfg, seed); },
                                                     verbose);
}

template <typename T>
eval::EvalReport adapt_typed(const RunConfig& cfg, const AdaptRequest& req, eval::Oracle& oracle,
                             const eval::FewShotDataset& few_shot, Rng& rng, eval::RunTag& tag) {
  eval::MethodArtifacts<T> artifacts;
  artifacts.surrogate = cfg.surrogate;
  artifacts.ascent = cfg.ascent;
  std::unique_ptr<model::ExPTModel<T>> expt_model;
  std::unique_ptr<baselines::TnpEdModel<T>> tnp_model;
  const bool needs_model = req.method == eval::Method::kExPT || req.method == eval::Method::kTnpEd;
  if (needs_model) {
    if (req.checkpoint.empty())
      throw ConfigError(std::string("method ") + std::string(eval::to_string(req.method)) + " requires --checkpoint");
    const auto meta = checkpoint::read_metadata(req.checkpoint);
    const std::string want = req.method == eval::Method::kExPT ? "expt" : "tnp-ed";
    if (!meta.model_kind.empty() && meta.model_kind != want)
      throw ConfigError("checkpoint " + req.checkpoint + " holds a " + meta.model_kind + " model, method needs " + want);
    if (req.method == eval::Method::kExPT) {
      expt_model = make_expt<T>(cfg, req.seed);
      checkpoint::load<T>(req.checkpoint, expt_model->parameters(), nullptr);
      artifacts.expt = expt_model.get();
    } else {
      tnp_model = make_tnp<T>(cfg, req.seed);
      checkpoint::load<T>(req.checkpoint, tnp_model->parameters(), nullptr);
      artifacts.tnp_ed = tnp_model.get();
    }
    tag.checkpoint_step = meta.step;
  }
  if (req.mode == "sequential") {
    if (req.method != eval::Method::kExPT) throw ConfigError("sequential mode is only defined for method expt");
    return eval::run_sequential<T>(few_shot, oracle, cfg.q, *expt_model, rng, tag);
  }
  return eval::run_adaptation<T>(req.method, artifacts, few_shot, oracle, cfg.q, rng, tag);
}

}  // namespace

std::string_view to_string(ModelKind kind) { return kind == ModelKind::kExPT ? "expt" : "tnp-ed"; }

std::string run_directory(const RunConfig& cfg, ModelKind kind, std::uint64_t seed) {
  return (fs::path(cfg.output_dir) / cfg.run_id /
          (std::string(to_string(kind)) + "-seed" + std::to_string(seed) + "-" + short_hash(cfg)))
      .string();
}

std::string checkpoint_path(const RunConfig& cfg, ModelKind kind, std::uint64_t seed, std::int64_t step) {
  std::ostringstream name;
  name << "step-" << std::setw(8) << std::setfill('0') << step << ".ckpt";
  return (fs::path(run_directory(cfg, kind, seed)) / name.str()).string();
}

std::vector<std::int64_t> checkpoint_steps(const RunConfig& cfg) {
  std::vector<std::int64_t> steps{0};
  for (std::int64_t s = cfg.train.checkpoint_every; s < cfg.train.iterations; s += cfg.train.checkpoint_every)
    steps.push_back(s);
  if (cfg.train.iterations > 0) steps.push_back(cfg.train.iterations);
  return steps;
}

PretrainOutcome pretrain(const RunConfig& cfg, ModelKind kind, std::uint64_t seed, bool verbose) {
  if (cfg.precision == config::Precision::kFloat64) return pretrain_dispatch<double>(cfg, kind, seed, verbose);
  return pretrain_dispatch<float>(cfg, kind, seed, verbose);
}

Task Task::parse(const std::string& text) {
  Task t;
  t.text = text;
  if (text.rfind("synthetic:", 0) == 0) {
    t.synthetic = true;
    t.kernel = synthfn::parse_kernel_kind(text.substr(10));
  } else if (text.rfind("table:", 0) == 0) {
    t.synthetic = false;
    t.table_path = text.substr(6);
    if (t.table_path.empty()) throw ConfigError("task 'table:' needs a CSV path");
  } else {
    throw ConfigError("task '" + text + "' must be synthetic:<kernel> or table:<csv>");
  }
  return t;
}

eval::Oracle build_oracle(const RunConfig& cfg, const Task& task, std::uint64_t seed) {
  eval::Oracle oracle = [&] {
    if (!task.synthetic) return eval::Oracle::table(task.table_path);
    std::lock_guard lock(oracle_build_mutex());
    const std::uint64_t oracle_seed = mix64(seed ^ mix64(fnv1a(task.text)));
    return eval::make_synthetic_oracle(cfg.oracle_kernel(task.kernel), cfg.generator.dimension, cfg.generator.box,
                                       cfg.reference_size, cfg.oracle_interp, oracle_seed);
  }();
  if (!cfg.y_star.empty()) oracle.set_y_star(std::stod(cfg.y_star));
  return oracle;
}

eval::Oracle& OracleCache::get(const RunConfig& cfg, const Task& task, std::uint64_t seed) {
  // Only settings that shape the oracle go into the key, so configs that
  // differ in pretraining alone share oracles.
  std::ostringstream key_text;
  key_text << task.text << '|' << seed << '|' << cfg.generator.dimension << '|' << cfg.generator.box.lo << '|'
           << cfg.generator.box.hi << '|' << cfg.reference_size << '|' << static_cast<int>(cfg.oracle_interp) << '|'
           << cfg.y_star;
  if (task.synthetic) key_text << '|' << cfg.oracle_kernel(task.kernel).describe();
  const std::string key = key_text.str();
  std::lock_guard lock(mutex_);
  auto it = oracles_.find(key);
  if (it == oracles_.end())
    it = oracles_.emplace(key, std::make_unique<eval::Oracle>(build_oracle(cfg, task, seed))).first;
  return *it->second;
}

eval::FewShotDataset few_shot_for(const RunConfig& cfg, eval::Oracle& oracle, const Task& task, std::uint64_t seed) {
  Rng rng = Rng::stream(seed, fnv1a(task.text), 0x66657773686f74ULL);
  return eval::make_few_shot(oracle.reference_x(), oracle.reference_y(), cfg.few_shot, rng, oracle.id(), seed);
}

std::string metrics_path(const RunConfig& cfg) { return (fs::path(cfg.output_dir) / "metrics.csv").string(); }

AdaptOutcome adapt(const RunConfig& cfg, const AdaptRequest& req, OracleCache* cache, bool emit) {
  if (req.mode != "simultaneous" && req.mode != "sequential")
    throw ConfigError("--mode must be simultaneous or sequential, got '" + req.mode + "'");
  const Task task = Task::parse(req.task);
  const auto started = std::chrono::steady_clock::now();
  std::optional<eval::Oracle> local;
  eval::Oracle* oracle = nullptr;
  if (cache) {
    oracle = &cache->get(cfg, task, req.seed);
  } else {
    local.emplace(build_oracle(cfg, task, req.seed));
    oracle = &*local;
  }
  if (oracle->reference_x().rows() == 0) throw ConfigError("task " + task.text + " has no reference data for few-shot selection");
  const auto few_shot = few_shot_for(cfg, *oracle, task, req.seed);
  oracle->reset_calls();
  Rng rng = Rng::stream(req.seed, fnv1a(task.text), 0x6164617074ULL);
  eval::RunTag tag{req.seed, 0, cfg.hash};
  AdaptOutcome out;
  out.report = cfg.precision == config::Precision::kFloat64
                   ? adapt_typed<double>(cfg, req, *oracle, few_shot, rng, tag)
                   : adapt_typed<float>(cfg, req, *oracle, few_shot, rng, tag);
  if (oracle->calls() != cfg.q)
    throw Error(ExitCode::kFailure, "internal: oracle called " + std::to_string(oracle->calls()) + " times, expected " +
                                        std::to_string(cfg.q));
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  auto& r = out.row;
  r.run_id = cfg.run_id;
  r.task = task.text;
  r.kernel_kind = task.synthetic ? std::string(synthfn::to_string(task.kernel)) : "table";
  r.seed = req.seed;
  r.checkpoint_step = out.report.checkpoint_step;
  r.q = cfg.q;
  r.score_median = out.report.median;
  r.score_max = out.report.max;
  r.score_mean = out.report.mean;
  r.few_shot_best = out.report.few_shot_best_norm;
  r.wall_time_s = wall;
  r.method = std::string(eval::to_string(req.method));
  r.mode = req.mode;
  r.generator_hash = cfg.generator_hash;
  r.config_hash = cfg.hash;

  if (emit) {
    const fs::path dir = fs::path(cfg.output_dir) / cfg.run_id / "reports";
    fs::create_directories(dir);
    std::ostringstream name;
    name << sanitize(task.text) << '-' << r.method << '-' << req.mode << "-seed" << req.seed << "-step"
         << r.checkpoint_step << '-' << short_hash(cfg) << ".json";
    out.report_path = (dir / name.str()).string();
    const std::string tmp = out.report_path + ".tmp";
    {
      std::ofstream f(tmp, std::ios::trunc);
      if (!f) throw IoError("cannot write " + tmp);
      f << nlohmann::json(out.report).dump(2) << '\n';
      if (!f) throw IoError("short write to " + tmp);
    }
    fs::rename(tmp, out.report_path);
    metrics::emit_metrics({r}, metrics_path(cfg));
  }
  return out;
}

std::size_t env_threads() {
  const char* v = std::getenv("EXPT_THREADS");
  if (!v || !*v) return 0;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n <= 0) throw ConfigError(std::string("EXPT_THREADS must be a positive integer, got '") + v + "'");
  return static_cast<std::size_t>(n);
}

std::vector<metrics::MetricsRow> sweep(const RunConfig& cfg, bool verbose) {
  if (cfg.sweep_seeds.empty() || cfg.sweep_kernels.empty() || cfg.sweep_methods.empty() || cfg.sweep_modes.empty())
    throw ConfigError("sweep: sweep.seeds, sweep.kernels, sweep.methods and sweep.modes must be non-empty");
  const auto steps_all = checkpoint_steps(cfg);
  std::vector<std::int64_t> eval_steps = cfg.eval_checkpoints;
  if (eval_steps.empty()) eval_steps.push_back(cfg.train.iterations);
  for (auto s : eval_steps)
    if (std::find(steps_all.begin(), steps_all.end(), s) == steps_all.end())
      throw ConfigError("run.eval_checkpoints: step " + std::to_string(s) + " is not a checkpoint step");

  std::set<std::string> done;
  auto cell_key = [](const std::string& task, const std::string& method, const std::string& mode, std::uint64_t seed,
                     std::int64_t step) {
    return task + "|" + method + "|" + mode + "|" + std::to_string(seed) + "|" + std::to_string(step);
  };
  for (const auto& r : metrics::read_metrics(metrics_path(cfg))) {
    if (r.run_id != cfg.run_id) continue;
    if (r.config_hash != cfg.hash)
      throw ConfigError("sweep: " + metrics_path(cfg) + " already holds rows for run.id '" + cfg.run_id +
                        "' from config " + r.config_hash.substr(0, 12) + "; this config is " + short_hash(cfg) +
                        " (choose another run.id or output_dir)");
    done.insert(cell_key(r.task, r.method, r.mode, r.seed, r.checkpoint_step));
  }

  const std::size_t total_threads = std::max<std::size_t>(1, env_threads() ? env_threads() : omp_get_max_threads());
  const std::size_t workers = std::min(total_threads, cfg.sweep_seeds.size());
  const int inner = static_cast<int>(std::max<std::size_t>(1, total_threads / workers));

  std::vector<std::vector<metrics::MetricsRow>> per_seed(cfg.sweep_seeds.size());
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::atomic<std::size_t> next{0};

  auto run_seed = [&](std::size_t idx) {
    const auto seed = static_cast<std::uint64_t>(cfg.sweep_seeds[idx]);
    bool need_expt = false, need_tnp = false;
    for (auto m : cfg.sweep_methods) {
      need_expt |= m == eval::Method::kExPT;
      need_tnp |= m == eval::Method::kTnpEd;
    }
    if (need_expt) pretrain(cfg, ModelKind::kExPT, seed, verbose);
    if (need_tnp) pretrain(cfg, ModelKind::kTnpEd, seed, verbose);
    OracleCache cache;
    for (auto kernel : cfg.sweep_kernels) {
      const std::string task = "synthetic:" + std::string(synthfn::to_string(kernel));
      for (auto method : cfg.sweep_methods) {
        const bool uses_model = method == eval::Method::kExPT || method == eval::Method::kTnpEd;
        for (const auto& mode : cfg.sweep_modes) {
          if (mode == "sequential" && method != eval::Method::kExPT) continue;
          const std::vector<std::int64_t> steps = uses_model ? eval_steps : std::vector<std::int64_t>{0};
          for (auto step : steps) {
            const std::string method_name(eval::to_string(method));
            if (done.count(cell_key(task, method_name, mode, seed, step))) continue;
            AdaptRequest req;
            req.task = task;
            req.mode = mode;
            req.method = method;
            req.seed = seed;
            if (uses_model)
              req.checkpoint = checkpoint_path(
                  cfg, method == eval::Method::kExPT ? ModelKind::kExPT : ModelKind::kTnpEd, seed, step);
            auto outcome = adapt(cfg, req, &cache, true);
            if (verbose)
              log::info(task + " " + method_name + " " + mode + " seed " + std::to_string(seed) + " step " +
                        std::to_string(step) + ": max " + csv::format_double(outcome.row.score_max));
            per_seed[idx].push_back(outcome.row);
          }
        }
      }
    }
  };

  auto worker = [&] {
    omp_set_num_threads(inner);
    for (std::size_t idx; (idx = next++) < cfg.sweep_seeds.size();) {
      {
        std::lock_guard lock(failure_mutex);
        if (failure) return;
      }
      try {
        run_seed(idx);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  std::vector<metrics::MetricsRow> rows;
  for (auto& v : per_seed) rows.insert(rows.end(), v.begin(), v.end());
  return rows;
}

std::string report(const std::string& metrics_file, bool force) {
  if (!fs::exists(metrics_file)) throw IoError("metrics file " + metrics_file + " does not exist");
  return metrics::format_report(metrics::aggregate(metrics::read_metrics(metrics_file), force));
}

}  // namespace expt::pipeline
