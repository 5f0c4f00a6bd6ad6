// Command-line front end: pretrain, adapt, sweep, report.

#include <omp.h>

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "expt/config.hpp"
#include "expt/errors.hpp"
#include "expt/pipeline.hpp"

namespace {

using namespace expt;

int run(int argc, char** argv) {
  CLI::App app{"ExPT: synthetic pretraining for few-shot experimental design"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config,-c", config_path, "run configuration file")->required();
    sub->add_option("--set", overrides, "override a config key (key=value), repeatable");
  };

  auto* pretrain = app.add_subcommand("pretrain", "pretrain a model on synthetic functions");
  add_config(pretrain);
  std::int64_t seed = -1;
  pretrain->add_option("--seed", seed, "overrides run.seed");

  auto* adapt = app.add_subcommand("adapt", "condition on a few-shot set and score Q candidates");
  add_config(adapt);
  std::string checkpoint, task, mode = "simultaneous", method;
  adapt->add_option("--checkpoint", checkpoint, "pretrained checkpoint")->required();
  adapt->add_option("--task", task, "synthetic:<kernel> or table:<csv>")->required();
  adapt->add_option("--mode", mode, "simultaneous | sequential")
      ->check(CLI::IsMember({"simultaneous", "sequential"}));
  adapt->add_option("--method", method, "overrides eval.method");
  adapt->add_option("--seed", seed, "overrides run.seed");

  auto* sweep = app.add_subcommand("sweep", "run the declared seed x kernel x method grid");
  add_config(sweep);

  auto* report = app.add_subcommand("report", "aggregate a metrics file across seeds");
  std::string metrics_file;
  bool force = false;
  report->add_option("--metrics", metrics_file, "metrics CSV")->required();
  report->add_flag("--force", force, "aggregate rows with mismatched generator hashes");

  auto* defaults = app.add_subcommand("defaults", "print every config key with its default");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::kConfig);
  }

  if (const auto n = pipeline::env_threads()) omp_set_num_threads(static_cast<int>(n));

  if (defaults->parsed()) {
    std::cout << config::describe_defaults();
    return 0;
  }
  if (report->parsed()) {
    std::cout << pipeline::report(metrics_file, force);
    return 0;
  }
  if (seed >= 0) overrides.push_back("run.seed=" + std::to_string(seed));
  if (!method.empty()) overrides.push_back("eval.method=" + method);
  const auto cfg = config::load_config(config_path, overrides);
  std::cerr << "config " << cfg.hash.substr(0, 12) << '\n';

  if (pretrain->parsed()) {
    const auto out = pipeline::pretrain(cfg, cfg.model_kind, cfg.seed, true);
    std::cout << "loss log: " << out.loss_csv << '\n';
    for (const auto& [step, path] : out.checkpoints) std::cout << "step " << step << ": " << path << '\n';
    return 0;
  }
  if (adapt->parsed()) {
    pipeline::AdaptRequest req;
    req.task = task;
    req.mode = mode;
    req.method = cfg.method;
    req.seed = cfg.seed;
    req.checkpoint = checkpoint;
    const auto out = pipeline::adapt(cfg, req);
    std::cout << "report: " << out.report_path << '\n'
              << "median " << out.report.median << "  max " << out.report.max << "  mean " << out.report.mean
              << "  D(best) " << out.report.few_shot_best_norm << '\n';
    return 0;
  }
  if (sweep->parsed()) {
    const auto rows = pipeline::sweep(cfg, true);
    std::cout << rows.size() << " rows appended to " << pipeline::metrics_path(cfg) << '\n';
    return 0;
  }
  return static_cast<int>(ExitCode::kConfig);
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const expt::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(expt::ExitCode::kIo);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(expt::ExitCode::kFailure);
  }
}
