// Command-line front end: run experiments, verify theory checks, generate
// pattern tasks and solve D-optimal designs.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "optdesign/optdesign.hpp"

namespace {

constexpr int kUsage = 1;
constexpr int kRuntime = 2;

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("optdesign");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  const char* env = std::getenv("OPTDESIGN_LOG");
  spdlog::set_level(env ? spdlog::level::from_str(env) : spdlog::level::warn);
}

int cmd_run(const std::string& config_path, const std::string& out, std::optional<std::uint64_t> seed,
            std::optional<std::size_t> workers) {
  optdesign::ExperimentConfig cfg;
  try {
    cfg = optdesign::ExperimentConfig::from_file(config_path);
    if (seed) cfg.seed = *seed;
    if (workers) cfg.workers = *workers;
  } catch (const optdesign::InvalidArgument& e) {
    spdlog::error("{}", e.what());
    return kUsage;
  }
  spdlog::info("running {} selector(s) x {} trial(s), budget {}", cfg.selectors.size(), cfg.split.trials, cfg.budget);
  try {
    const auto result = optdesign::run_experiment(cfg, {.out_dir = std::filesystem::path(out)});
    for (const auto& r : result.records) {
      if (r.error) spdlog::error("{} trial {} round {}: {}", r.selector, r.trial, r.t, *r.error);
    }
    std::cout << "wrote " << (std::filesystem::path(out) / "rounds.jsonl").string() << " and "
              << (std::filesystem::path(out) / "summary.csv").string() << '\n';
    return result.failed ? kRuntime : 0;
  } catch (const optdesign::InvalidArgument& e) {
    spdlog::error("{}", e.what());
    return kUsage;
  }
}

int cmd_verify(const std::string& suite, std::uint64_t seed) {
  std::vector<optdesign::CheckReport> reports;
  try {
    reports = optdesign::run_verify(suite, seed);
  } catch (const optdesign::InvalidArgument& e) {
    spdlog::error("{}", e.what());
    return kUsage;
  }
  bool ok = true;
  for (const auto& r : reports) {
    std::cout << r.to_json().dump() << '\n';
    ok = ok && r.passed;
  }
  return ok ? 0 : kRuntime;
}

int cmd_gen_task(const std::string& task, std::size_t n, std::uint64_t seed, const std::string& out) {
  optdesign::Dataset ds;
  try {
    ds = optdesign::gen_task(task, n, seed);
  } catch (const optdesign::InvalidArgument& e) {
    spdlog::error("{}", e.what());
    return kUsage;
  }
  optdesign::write_csv(out, ds);
  spdlog::info("wrote {} rows to {}", ds.rows(), out);
  return 0;
}

int cmd_dopt(const std::string& path, double tol, std::size_t max_iters, bool no_header,
             const std::optional<std::string>& out) {
  optdesign::DesignResult res;
  try {
    res = optdesign::solve_dopt(optdesign::load_feature_rows(path, !no_header), tol, max_iters);
  } catch (const optdesign::InvalidArgument& e) {
    spdlog::error("{}", e.what());
    return kUsage;
  }
  const nlohmann::json j = {{"weights", res.weights},
                            {"certificate", res.certificate},
                            {"log_det", res.log_det},
                            {"iterations", res.iterations}};
  if (out) {
    std::ofstream f(*out);
    if (!f) throw optdesign::Error("cannot write '" + *out + "'");
    f << j.dump(2) << '\n';
  } else {
    std::cout << j.dump(2) << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Optimal-design example selection for in-context learning"};
  app.require_subcommand(1);

  std::string config, out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  auto* run = app.add_subcommand("run", "Run an experiment config");
  run->add_option("--config", config, "Experiment JSON")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out, "Output directory")->required();
  run->add_option("--seed", seed, "Override the config seed");
  run->add_option("--workers", workers, "Concurrent (selector, trial) jobs");

  std::string suite = "all";
  std::uint64_t verify_seed = 0;
  auto* verify = app.add_subcommand("verify", "Run theory and property checks; JSON line per check");
  verify->add_option("--suite", suite, "all | posterior | theory | selectors | dopt | tasks");
  verify->add_option("--seed", verify_seed, "Seed");

  std::string task, task_out;
  std::size_t n = 100;
  std::uint64_t task_seed = 0;
  auto* gen = app.add_subcommand("gen-task", "Write a synthetic pattern task as CSV");
  gen->add_option("task", task, "arc-expand-contract | arc-rotate | pcfg-add-subtract | pcfg-repeat")->required();
  gen->add_option("--n", n, "Rows (even)");
  gen->add_option("--seed", task_seed, "Seed");
  gen->add_option("--out", task_out, "Output CSV")->required();

  std::string features;
  double tol = optdesign::kDefaultDesignTol;
  std::size_t max_iters = optdesign::kDefaultDesignMaxIters;
  bool no_header = false;
  std::optional<std::string> dopt_out;
  auto* dopt = app.add_subcommand("dopt", "D-optimal design weights over the rows of a CSV");
  dopt->add_option("features", features, "Feature CSV (every column is a feature)")->required()->check(CLI::ExistingFile);
  dopt->add_option("--tol", tol, "Certificate tolerance");
  dopt->add_option("--max-iters", max_iters, "Iteration cap");
  dopt->add_flag("--no-header", no_header, "The CSV has no header row");
  dopt->add_option("--out", dopt_out, "Output JSON (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    if (*run) return cmd_run(config, out, seed, workers);
    if (*verify) return cmd_verify(suite, verify_seed);
    if (*gen) return cmd_gen_task(task, n, task_seed, task_out);
    if (*dopt) return cmd_dopt(features, tol, max_iters, no_header, dopt_out);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kRuntime;
  }
  return kUsage;
}
