#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "optdesign/error.hpp"
#include "optdesign/oracles.hpp"
#include "optdesign/posterior.hpp"
#include "optdesign/remote.hpp"
#include "optdesign/rng.hpp"
#include "optdesign/selectors.hpp"
#include "optdesign/tasks.hpp"
#include "optdesign/theory.hpp"

namespace optdesign {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Metrics.

enum class Metric { Misclassification, Mse, ZeroOneVector };

[[nodiscard]] inline std::string_view metric_name(Metric m) {
  switch (m) {
    case Metric::Misclassification: return "misclassification";
    case Metric::Mse: return "mse";
    case Metric::ZeroOneVector: return "zero_one_vector";
  }
  return "?";
}

[[nodiscard]] inline Metric parse_metric(std::string_view s) {
  if (s == "misclassification") return Metric::Misclassification;
  if (s == "mse") return Metric::Mse;
  if (s == "zero_one_vector") return Metric::ZeroOneVector;
  throw InvalidArgument("unknown metric '" + std::string(s) + "'");
}

[[nodiscard]] inline Metric default_metric(TaskKind k) {
  switch (k) {
    case TaskKind::Classification: return Metric::Misclassification;
    case TaskKind::Vector: return Metric::ZeroOneVector;
    case TaskKind::Regression: return Metric::Mse;
  }
  return Metric::Mse;
}

/// Mean per-query loss. Misclassification counts ŷ ≠ y; zero_one_vector
/// counts vectors that differ after rounding both to the nearest integer;
/// mse averages ‖ŷ − y‖².
[[nodiscard]] inline double evaluate(std::span<const Vector> predictions, std::span<const Vector> truths,
                                     Metric metric) {
  if (predictions.size() != truths.size()) {
    throw InvalidArgument("evaluate: " + std::to_string(predictions.size()) + " predictions for " +
                          std::to_string(truths.size()) + " truths");
  }
  if (truths.empty()) throw InvalidArgument("evaluate: no test queries");
  double total = 0.0;
  for (std::size_t k = 0; k < truths.size(); ++k) {
    const Vector& p = predictions[k];
    const Vector& y = truths[k];
    if (p.size() != y.size()) throw InvalidArgument("evaluate: prediction and truth widths differ");
    switch (metric) {
      case Metric::Misclassification:
        if (y.size() != 1) throw InvalidArgument("evaluate: misclassification needs scalar labels");
        total += p[0] != y[0] ? 1.0 : 0.0;
        break;
      case Metric::Mse: total += (p - y).squaredNorm(); break;
      case Metric::ZeroOneVector: total += (p.array().round() != y.array().round()).any() ? 1.0 : 0.0; break;
    }
  }
  return total / static_cast<double>(truths.size());
}

// ---------------------------------------------------------------------------
// Configuration.

struct DatasetSource {
  /// CSV path; empty when a generator is used.
  std::string path;
  CsvOptions csv;
  /// arc-expand-contract | arc-rotate | pcfg-add-subtract | pcfg-repeat | clustered | gaussian
  std::string generator;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  // clustered / gaussian
  double alpha = 0.95;
  double beta = 0.05;
  Eigen::Index dim = 0;
  std::size_t n_close = 0;
  std::size_t n_far = 0;
  std::size_t n_queries = 2;
  bool unit_norm = false;

  [[nodiscard]] bool synthetic_labels() const { return generator == "clustered" || generator == "gaussian"; }
};

struct OracleSpec {
  enum class Kind { Replay, LinearGaussian, Remote };
  Kind kind = Kind::Replay;
  /// linear_gaussian: label noise σ² and scale of Θ_* ~ N(0, scale² I).
  double noise_var = 0.01;
  double theta_scale = 1.0;
  /// replay: whether Least/MaxEnt/SAL may simulate with the model posterior.
  bool simulate_predictions = true;
  RemoteOptions remote;
  /// remote: predictive draws per test query for majority-vote evaluation.
  std::size_t vote_samples = 5;
};

[[nodiscard]] inline std::string_view oracle_kind_name(OracleSpec::Kind k) {
  switch (k) {
    case OracleSpec::Kind::Replay: return "replay";
    case OracleSpec::Kind::LinearGaussian: return "linear_gaussian";
    case OracleSpec::Kind::Remote: return "remote";
  }
  return "?";
}

struct ModelSpec {
  double prior_var = 1.0;
  /// Defaults to the linear-Gaussian oracle's σ², else 1.
  std::optional<double> noise_var;
};

struct ExperimentConfig {
  DatasetSource dataset;
  std::vector<SelectorConfig> selectors;
  std::size_t budget = 5;
  SplitSpec split;
  std::optional<Metric> metric;
  ModelSpec model;
  OracleSpec oracle;
  std::uint64_t seed = 0;
  /// Concurrent (selector, trial) jobs.
  std::size_t workers = 1;

  [[nodiscard]] double model_noise() const {
    if (model.noise_var) return *model.noise_var;
    return oracle.kind == OracleSpec::Kind::LinearGaussian ? oracle.noise_var : 1.0;
  }

  [[nodiscard]] static ExperimentConfig from_json(const json& j);
  [[nodiscard]] static ExperimentConfig from_file(const std::string& path);
};

namespace detail {

/// Strict view over a JSON object: unknown keys and wrong types are errors.
class Fields {
 public:
  Fields(const json& j, std::string where, std::initializer_list<const char*> allowed)
      : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw InvalidArgument("config: '" + where_ + "' must be an object");
    for (const auto& [key, value] : j_.items()) {
      if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
        throw InvalidArgument("config: unknown key '" + path(key.c_str()) + "'");
      }
    }
  }

  [[nodiscard]] bool has(const char* key) const { return j_.contains(key); }
  [[nodiscard]] const json& at(const char* key) const {
    if (!has(key)) throw InvalidArgument("config: missing required key '" + path(key) + "'");
    return j_.at(key);
  }
  [[nodiscard]] std::string path(const char* key) const { return where_.empty() ? key : where_ + "." + key; }

  template <class T>
  [[nodiscard]] T get(const char* key, T fallback) const {
    return has(key) ? as<T>(key) : fallback;
  }
  template <class T>
  [[nodiscard]] T require(const char* key) const {
    (void)at(key);
    return as<T>(key);
  }

 private:
  template <class T>
  T as(const char* key) const {
    const json& v = j_.at(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw InvalidArgument("config: '" + path(key) + "' must be a boolean");
    } else if constexpr (std::is_unsigned_v<T>) {
      // Parsed text yields unsigned; values built in code may be signed.
      if (!v.is_number_integer() || v.get<std::int64_t>() < 0) throw InvalidArgument("config: '" + path(key) + "' must be a nonnegative integer");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw InvalidArgument("config: '" + path(key) + "' must be an integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw InvalidArgument("config: '" + path(key) + "' must be a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw InvalidArgument("config: '" + path(key) + "' must be a string");
    }
    return v.get<T>();
  }

  const json& j_;
  std::string where_;
};

inline SelectorConfig parse_selector(const json& j, const std::string& where) {
  const Fields f(j, where, {"policy", "m", "prefilter", "r_samples", "decimals", "dopt_tol", "dopt_max_iters", "workers"});
  SelectorConfig s;
  s.policy = parse_policy(f.require<std::string>("policy"));
  s.m = f.get<std::size_t>("m", s.m);
  s.prefilter = f.get<std::size_t>("prefilter", s.prefilter);
  s.r_samples = f.get<std::size_t>("r_samples", s.r_samples);
  s.decimals = f.get<int>("decimals", s.decimals);
  s.dopt_tol = f.get<double>("dopt_tol", s.dopt_tol);
  s.dopt_max_iters = f.get<std::size_t>("dopt_max_iters", s.dopt_max_iters);
  s.workers = f.get<std::size_t>("workers", s.workers);
  s.validate();
  return s;
}

inline DatasetSource parse_dataset(const json& j) {
  const Fields f(j, "dataset",
                 {"path", "label_cols", "has_header", "normalize", "kind", "group_col", "generator", "n", "seed",
                  "alpha", "beta", "dim", "n_close", "n_far", "n_queries", "unit_norm"});
  DatasetSource d;
  if (f.has("path") == f.has("generator")) {
    throw InvalidArgument("config: dataset needs exactly one of 'path' or 'generator'");
  }
  if (f.has("path")) {
    d.path = f.require<std::string>("path");
    if (f.has("label_cols")) {
      const json& cols = f.at("label_cols");
      if (!cols.is_array()) throw InvalidArgument("config: 'dataset.label_cols' must be an array of strings");
      for (const auto& c : cols) {
        if (!c.is_string()) throw InvalidArgument("config: 'dataset.label_cols' must be an array of strings");
        d.csv.label_cols.push_back(c.get<std::string>());
      }
    }
    d.csv.has_header = f.get<bool>("has_header", true);
    d.csv.normalize = parse_normalize(f.get<std::string>("normalize", "none"));
    if (f.has("kind")) d.csv.kind = parse_task_kind(f.require<std::string>("kind"));
    if (f.has("group_col")) d.csv.group_col = f.require<std::string>("group_col");
    return d;
  }
  d.generator = f.require<std::string>("generator");
  d.seed = f.get<std::uint64_t>("seed", 0);
  if (d.generator == "clustered") {
    d.alpha = f.get<double>("alpha", d.alpha);
    d.beta = f.get<double>("beta", d.beta);
    d.dim = static_cast<Eigen::Index>(f.require<std::size_t>("dim"));
    d.n_close = f.require<std::size_t>("n_close");
    d.n_far = f.get<std::size_t>("n_far", 0);
    d.n_queries = f.get<std::size_t>("n_queries", d.n_queries);
  } else if (d.generator == "gaussian") {
    d.n = f.require<std::size_t>("n");
    d.dim = static_cast<Eigen::Index>(f.require<std::size_t>("dim"));
    d.unit_norm = f.get<bool>("unit_norm", false);
  } else {
    d.n = f.require<std::size_t>("n");
    (void)gen_task(d.generator, 2, 0);  // name check
  }
  return d;
}

inline OracleSpec parse_oracle(const json& j) {
  const Fields f(j, "oracle",
                 {"type", "noise_var", "theta_scale", "simulate_predictions", "endpoint", "timeout_ms", "retries",
                  "backoff_ms", "max_in_flight", "label_dim", "vote_samples"});
  OracleSpec o;
  const auto type = f.require<std::string>("type");
  if (type == "replay") {
    o.kind = OracleSpec::Kind::Replay;
    o.simulate_predictions = f.get<bool>("simulate_predictions", true);
  } else if (type == "linear_gaussian") {
    o.kind = OracleSpec::Kind::LinearGaussian;
    o.noise_var = f.get<double>("noise_var", o.noise_var);
    o.theta_scale = f.get<double>("theta_scale", o.theta_scale);
    if (!(o.noise_var >= 0.0)) throw InvalidArgument("config: oracle.noise_var must be >= 0");
  } else if (type == "remote") {
    o.kind = OracleSpec::Kind::Remote;
    o.remote.endpoint = f.require<std::string>("endpoint");
    o.remote.timeout = std::chrono::milliseconds(f.get<std::int64_t>("timeout_ms", 10000));
    o.remote.retries = f.get<int>("retries", 2);
    o.remote.initial_backoff = std::chrono::milliseconds(f.get<std::int64_t>("backoff_ms", 250));
    o.remote.max_in_flight = f.get<std::ptrdiff_t>("max_in_flight", 4);
    o.remote.label_dim = static_cast<Eigen::Index>(f.get<std::size_t>("label_dim", 1));
    o.vote_samples = f.get<std::size_t>("vote_samples", 5);
    if (o.vote_samples == 0) throw InvalidArgument("config: oracle.vote_samples must be >= 1");
  } else {
    throw InvalidArgument("config: unknown oracle type '" + type + "' (expected replay, linear_gaussian or remote)");
  }
  for (const char* k : {"noise_var", "theta_scale"}) {
    if (f.has(k) && o.kind != OracleSpec::Kind::LinearGaussian) {
      throw InvalidArgument(std::string("config: oracle.") + k + " only applies to linear_gaussian");
    }
  }
  if (f.has("simulate_predictions") && o.kind != OracleSpec::Kind::Replay) {
    throw InvalidArgument("config: oracle.simulate_predictions only applies to replay");
  }
  return o;
}

}  // namespace detail

inline ExperimentConfig ExperimentConfig::from_json(const json& j) {
  const detail::Fields f(j, "", {"dataset", "selector", "selectors", "budget", "split", "metric", "model", "oracle", "seed",
                                 "workers"});
  ExperimentConfig c;
  c.dataset = detail::parse_dataset(f.at("dataset"));
  if (f.has("selector") == f.has("selectors")) {
    throw InvalidArgument("config: give exactly one of 'selector' or 'selectors'");
  }
  if (f.has("selector")) {
    c.selectors.push_back(detail::parse_selector(f.at("selector"), "selector"));
  } else {
    const json& arr = f.at("selectors");
    if (!arr.is_array() || arr.empty()) throw InvalidArgument("config: 'selectors' must be a non-empty array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      c.selectors.push_back(detail::parse_selector(arr[i], "selectors[" + std::to_string(i) + "]"));
    }
  }
  c.budget = f.get<std::size_t>("budget", c.budget);
  if (c.budget == 0) throw InvalidArgument("config: budget must be >= 1");
  if (f.has("split")) {
    const detail::Fields s(f.at("split"), "split", {"k_test", "trials", "normalize"});
    c.split.k_test = s.get<std::size_t>("k_test", c.split.k_test);
    c.split.trials = s.get<std::size_t>("trials", c.split.trials);
    c.split.normalize = parse_normalize(s.get<std::string>("normalize", "none"));
  }
  if (c.split.trials == 0) throw InvalidArgument("config: split.trials must be >= 1");
  if (f.has("metric")) c.metric = parse_metric(f.require<std::string>("metric"));
  if (f.has("model")) {
    const detail::Fields m(f.at("model"), "model", {"prior_var", "noise_var"});
    c.model.prior_var = m.get<double>("prior_var", c.model.prior_var);
    if (m.has("noise_var")) c.model.noise_var = m.require<double>("noise_var");
  }
  if (!(c.model.prior_var > 0.0)) throw InvalidArgument("config: model.prior_var must be > 0");
  if (c.model.noise_var && !(*c.model.noise_var > 0.0)) throw InvalidArgument("config: model.noise_var must be > 0");
  c.oracle = f.has("oracle") ? detail::parse_oracle(f.at("oracle")) : OracleSpec{};
  c.seed = f.get<std::uint64_t>("seed", 0);
  c.workers = f.get<std::size_t>("workers", 1);
  if (c.workers == 0) throw InvalidArgument("config: workers must be >= 1");
  if (c.dataset.synthetic_labels() && c.oracle.kind != OracleSpec::Kind::LinearGaussian) {
    throw InvalidArgument("config: generator '" + c.dataset.generator +
                          "' has no labels; use oracle type linear_gaussian");
  }
  if (c.model_noise() <= 0.0) throw InvalidArgument("config: model noise must be > 0 (set model.noise_var)");
  return c;
}

inline ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open config '" + path + "'");
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw InvalidArgument("config '" + path + "' is not valid JSON");
  return from_json(j);
}

// ---------------------------------------------------------------------------
// Records and output.

struct RoundRecord {
  std::string selector;
  std::size_t trial = 0;
  std::size_t t = 0;
  std::size_t chosen = 0;
  std::vector<Vector> predictions;
  double loss = 0.0;
  double max_test_variance = 0.0;
  double wall_time = 0.0;
  /// Set on the record that aborted a trial.
  std::optional<std::string> error;

  /// Deterministic fields only; wall time is written separately.
  [[nodiscard]] json to_json() const {
    json j = {{"selector", selector}, {"trial", trial}, {"t", t}};
    if (error) {
      j["partial"] = true;
      j["error"] = *error;
      return j;
    }
    json preds = json::array();
    for (const auto& p : predictions) preds.push_back(wire::encode_vector(p));
    j["chosen"] = chosen;
    j["loss"] = loss;
    j["max_test_variance"] = max_test_variance;
    j["predictions"] = std::move(preds);
    return j;
  }
};

struct RunResult {
  std::vector<RoundRecord> records;
  bool failed = false;
};

namespace detail {

/// Writes job streams to rounds.jsonl / timings.jsonl in job order. The job
/// at the head streams straight through; later jobs buffer until it finishes.
class OrderedSink {
 public:
  OrderedSink(const std::filesystem::path& dir, std::size_t jobs) : buffers_(jobs), done_(jobs, false) {
    std::filesystem::create_directories(dir);
    rounds_.open(dir / "rounds.jsonl", std::ios::trunc);
    timings_.open(dir / "timings.jsonl", std::ios::trunc);
    if (!rounds_ || !timings_) throw Error("cannot open output files in '" + dir.string() + "'");
  }

  void emit(std::size_t job, const RoundRecord& r) {
    std::lock_guard lock(mu_);
    std::pair<std::string, std::string> lines{
        r.to_json().dump(),
        json{{"selector", r.selector}, {"trial", r.trial}, {"t", r.t}, {"wall_time_s", r.wall_time}}.dump()};
    if (job == head_) {
      write(lines);
    } else {
      buffers_[job].push_back(std::move(lines));
    }
  }

  void finish(std::size_t job) {
    std::lock_guard lock(mu_);
    done_[job] = true;
    while (head_ < done_.size() && done_[head_]) {
      ++head_;
      if (head_ < buffers_.size()) {
        for (const auto& l : buffers_[head_]) write(l);
        buffers_[head_].clear();
      }
    }
  }

 private:
  void write(const std::pair<std::string, std::string>& l) {
    rounds_ << l.first << '\n' << std::flush;
    timings_ << l.second << '\n' << std::flush;
  }

  std::mutex mu_;
  std::ofstream rounds_;
  std::ofstream timings_;
  std::vector<std::vector<std::pair<std::string, std::string>>> buffers_;
  std::vector<bool> done_;
  std::size_t head_ = 0;
};

}  // namespace detail

/// Per-trial losses plus, for every (selector, t), a row with trial = "mean"
/// carrying the sample standard deviation across trials and its standard error.
inline void write_summary(const std::filesystem::path& file, const std::vector<RoundRecord>& records) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw Error("cannot write '" + file.string() + "'");
  out << "selector,trial,t,loss,std_dev,std_err\n";
  std::vector<std::string> order;
  std::map<std::pair<std::string, std::size_t>, std::vector<double>> by_round;
  for (const auto& r : records) {
    if (r.error) continue;
    if (std::find(order.begin(), order.end(), r.selector) == order.end()) order.push_back(r.selector);
    out << r.selector << ',' << r.trial << ',' << r.t << ',' << detail::format_double(r.loss) << ",,\n";
    by_round[{r.selector, r.t}].push_back(r.loss);
  }
  for (const auto& sel : order) {
    for (const auto& [key, losses] : by_round) {
      if (key.first != sel) continue;
      const double n = static_cast<double>(losses.size());
      double sum = 0.0;
      for (double l : losses) sum += l;
      const double mean = sum / n;
      double ss = 0.0;
      for (double l : losses) ss += (l - mean) * (l - mean);
      const double sd = losses.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
      out << sel << ",mean," << key.second << ',' << detail::format_double(mean) << ','
          << detail::format_double(sd) << ',' << detail::format_double(sd / std::sqrt(n)) << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Runner.

/// Everything one (selector, trial) job needs; rebuilt identically for every
/// selector so paired runs share splits, Θ_* and labels.
struct TrialData {
  Pool pool;
  TestSet tests;
  std::vector<Vector> pool_truth;
  std::vector<Vector> test_truth;
  std::shared_ptr<const PredictiveOracle> predictive;
  Eigen::Index label_dim = 1;
  TaskKind kind = TaskKind::Regression;
  bool round_predictions = false;
};

namespace stream {
inline constexpr std::uint64_t kTheta = 1;
inline constexpr std::uint64_t kLabels = 2;
inline constexpr std::uint64_t kVotes = 3;
inline constexpr std::uint64_t kInstance = 4;
inline constexpr std::uint64_t kSelectorBase = 100;
}  // namespace stream

/// Loads or generates the fixed dataset of a config; empty for clustered
/// instances, which are drawn per trial.
[[nodiscard]] inline std::optional<Dataset> load_dataset(const DatasetSource& src) {
  if (!src.path.empty()) return load_csv(src.path, src.csv);
  if (src.generator == "clustered") return std::nullopt;
  if (src.generator == "gaussian") {
    if (src.n == 0 || src.dim <= 0) throw InvalidArgument("gaussian generator: n and dim must be positive");
    Rng rng(src.seed);
    Dataset ds;
    ds.kind = TaskKind::Regression;
    ds.features.resize(static_cast<Eigen::Index>(src.n), src.dim);
    for (Eigen::Index i = 0; i < ds.features.rows(); ++i)
      for (Eigen::Index j = 0; j < src.dim; ++j) ds.features(i, j) = rng.normal();
    if (src.unit_norm) normalize_features(ds.features, Normalize::UnitNorm);
    ds.labels = Matrix::Zero(ds.features.rows(), 1);
    return ds;
  }
  return gen_task(src.generator, src.n, src.seed);
}

[[nodiscard]] inline TrialData prepare_trial(const ExperimentConfig& cfg, const std::optional<Dataset>& ds,
                                             std::size_t trial) {
  const Rng trial_rng = Rng(cfg.seed).split(trial);
  TrialData td;
  if (ds) {
    SplitSpec spec = cfg.split;
    spec.seed = cfg.seed;
    auto split = make_split(*ds, spec, trial);
    td.pool = std::move(split.pool);
    td.tests = std::move(split.tests);
    td.test_truth = std::move(split.test_labels);
    for (std::size_t i = 0; i < td.pool.size(); ++i) td.pool_truth.push_back(split.oracle.label_at(i));
    td.label_dim = ds->label_dim();
    td.kind = ds->kind;
    td.round_predictions = ds->kind != TaskKind::Regression && ds->integer_labels();
  } else {
    const auto& s = cfg.dataset;
    const auto inst = make_clustered_instance(s.alpha, s.beta, s.dim, s.n_close, s.n_far,
                                              Rng(s.seed).split(trial).next_u64(), s.n_queries);
    td.pool = Pool(inst.features);
    td.tests = inst.queries;
  }

  const auto d = td.pool.dim();
  const Matrix prior_cov = cfg.model.prior_var * Matrix::Identity(d, d);
  const Matrix prior_mean = Matrix::Zero(d, td.label_dim);
  const double noise = cfg.model_noise();
  switch (cfg.oracle.kind) {
    case OracleSpec::Kind::LinearGaussian: {
      if (cfg.dataset.synthetic_labels()) td.label_dim = 1;
      Rng theta_rng = trial_rng.split(stream::kTheta);
      Matrix theta(d, td.label_dim);
      for (Eigen::Index i = 0; i < theta.rows(); ++i)
        for (Eigen::Index c = 0; c < theta.cols(); ++c) theta(i, c) = cfg.oracle.theta_scale * theta_rng.normal();
      const LinearGaussianOracle truth(theta, Matrix::Zero(d, td.label_dim), prior_cov, cfg.oracle.noise_var);
      Rng label_rng = trial_rng.split(stream::kLabels);
      td.pool_truth.clear();
      td.test_truth.clear();
      for (const auto& x : td.pool.features()) td.pool_truth.push_back(truth.true_label(x, label_rng));
      for (const auto& q : td.tests) td.test_truth.push_back(truth.true_label(q, label_rng));
      td.kind = TaskKind::Regression;
      td.round_predictions = false;
      td.predictive = std::make_shared<LinearGaussianOracle>(theta, Matrix::Zero(d, td.label_dim), prior_cov, noise);
      break;
    }
    case OracleSpec::Kind::Replay:
      if (cfg.oracle.simulate_predictions) {
        td.predictive = std::make_shared<LinearGaussianOracle>(Matrix::Zero(d, td.label_dim), prior_mean, prior_cov, noise);
      } else {
        td.predictive = std::make_shared<DatasetReplayOracle>(td.pool.features(), td.pool_truth);
      }
      break;
    case OracleSpec::Kind::Remote: {
      RemoteOptions opt = cfg.oracle.remote;
      opt.label_dim = td.label_dim;
      td.predictive = std::make_shared<RemotePredictorOracle>(std::move(opt));
      break;
    }
  }
  return td;
}

namespace detail {

/// Most frequent bucketed answer (ties: smallest bucket), returned as the
/// first draw that fell in it.
inline Vector majority_vote(std::span<const Vector> draws, int decimals) {
  std::map<std::vector<std::int64_t>, std::pair<std::size_t, std::size_t>> hist;  // bucket → (count, first)
  for (std::size_t i = 0; i < draws.size(); ++i) {
    auto [it, fresh] = hist.try_emplace(bucket(draws[i], decimals), 0, i);
    ++it->second.first;
  }
  auto best = hist.begin();
  for (auto it = hist.begin(); it != hist.end(); ++it) {
    if (it->second.first > best->second.first) best = it;
  }
  return draws[best->second.second];
}

inline std::vector<Vector> predict_tests(const ExperimentConfig& cfg, const TrialData& td, const PosteriorState& state,
                                         const Pool& pool, int decimals, Rng& vote_rng) {
  std::vector<Vector> preds;
  preds.reserve(td.tests.size());
  for (const auto& q : td.tests) {
    Vector p;
    if (cfg.oracle.kind == OracleSpec::Kind::Remote) {
      const auto draws = td.predictive->sample_prediction(q, pool.history(), cfg.oracle.vote_samples, vote_rng);
      p = majority_vote(draws, td.round_predictions ? 0 : decimals);
    } else {
      p = state.predict_mean(q);
    }
    if (td.round_predictions) p = p.array().round().matrix();
    preds.push_back(std::move(p));
  }
  return preds;
}

}  // namespace detail

/// Checks that fail before any round runs: budget, metric/task compatibility
/// and selector/oracle capabilities.
inline void check_runnable(const ExperimentConfig& cfg, const TrialData& td, Metric metric) {
  if (cfg.budget > td.pool.size()) {
    throw InvalidArgument("config: budget " + std::to_string(cfg.budget) + " exceeds pool size " +
                          std::to_string(td.pool.size()));
  }
  if (metric == Metric::Misclassification && td.label_dim != 1) {
    throw InvalidArgument("config: metric misclassification needs scalar labels (label width " +
                          std::to_string(td.label_dim) + ")");
  }
  for (const auto& s : cfg.selectors) {
    if (needs_predictions(s.policy) && !td.predictive->capabilities().can_sample_predictions) {
      throw InvalidArgument("config: selector " + std::string(policy_name(s.policy)) + " needs predictive sampling but oracle '" +
                            std::string(oracle_kind_name(cfg.oracle.kind)) + "' cannot simulate predictions");
    }
  }
}

struct RunOptions {
  /// When set, rounds.jsonl, timings.jsonl and summary.csv are written here.
  std::optional<std::filesystem::path> out_dir;
};

/// Runs every (selector, trial) job for cfg.budget rounds. Jobs are ordered
/// selector-major and may run concurrently; outputs are identical for any
/// worker count. An error inside a job ends that job with a flagged record.
[[nodiscard]] inline RunResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {}) {
  const auto ds = load_dataset(cfg.dataset);
  const Metric metric = cfg.metric.value_or(ds ? default_metric(ds->kind) : Metric::Mse);
  check_runnable(cfg, prepare_trial(cfg, ds, 0), metric);

  const std::size_t trials = cfg.split.trials;
  const std::size_t jobs = cfg.selectors.size() * trials;
  std::unique_ptr<detail::OrderedSink> sink;
  if (opts.out_dir) sink = std::make_unique<detail::OrderedSink>(*opts.out_dir, jobs);

  std::vector<std::vector<RoundRecord>> per_job(jobs);
  std::vector<char> job_failed(jobs, 0);
  detail::parallel_for(jobs, cfg.workers, [&](std::size_t job) {
    const auto& sel = cfg.selectors[job / trials];
    const std::size_t trial = job % trials;
    const std::string name(policy_name(sel.policy));
    auto& out = per_job[job];
    std::size_t t = 0;
    try {
      TrialData td = prepare_trial(cfg, ds, trial);
      const Rng trial_rng = Rng(cfg.seed).split(trial);
      Rng sel_rng = trial_rng.split(stream::kSelectorBase + static_cast<std::uint64_t>(sel.policy));
      Rng vote_rng = trial_rng.split(stream::kVotes).split(static_cast<std::uint64_t>(sel.policy));
      const auto d = td.pool.dim();
      PosteriorState state(Matrix(Matrix::Zero(d, td.label_dim)), cfg.model.prior_var * Matrix::Identity(d, d),
                           cfg.model_noise());
      for (t = 1; t <= cfg.budget; ++t) {
        const auto start = std::chrono::steady_clock::now();
        const auto dec = select(sel, state, td.pool, td.tests, td.predictive.get(), sel_rng);
        const Vector& y = td.pool_truth.at(dec.chosen);
        state.absorb({td.pool.feature(dec.chosen), y});
        td.pool.acquire(dec.chosen, y);
        RoundRecord r;
        r.selector = name;
        r.trial = trial;
        r.t = t;
        r.chosen = dec.chosen;
        r.predictions = detail::predict_tests(cfg, td, state, td.pool, sel.decimals, vote_rng);
        r.loss = evaluate(r.predictions, td.test_truth, metric);
        r.max_test_variance = state.max_posterior_variance(td.tests);
        r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (sink) sink->emit(job, r);
        out.push_back(std::move(r));
      }
    } catch (const Error& e) {
      RoundRecord r;
      r.selector = name;
      r.trial = trial;
      r.t = t;
      r.error = e.what();
      if (sink) sink->emit(job, r);
      out.push_back(std::move(r));
      job_failed[job] = 1;
    }
    if (sink) sink->finish(job);
  });

  RunResult result;
  for (std::size_t j = 0; j < jobs; ++j) {
    for (auto& r : per_job[j]) result.records.push_back(std::move(r));
    result.failed = result.failed || job_failed[j];
  }
  if (opts.out_dir) write_summary(*opts.out_dir / "summary.csv", result.records);
  return result;
}

// ---------------------------------------------------------------------------
// verify suite.

/// Regenerates every task with an independent rule implementation and counts mismatches.
[[nodiscard]] inline CheckReport check_generators(std::uint64_t seed, std::size_t n = 1000) {
  std::size_t mismatches = 0;
  // Full-grid rotation by index arithmetic: out(c, 3 − r) = in(r, c) for cw.
  auto rot = [](const Vector& in, bool cw) {
    Vector out = Vector::Zero(16);
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) {
        const bool corner = (r == 0 || r == 3) && (c == 0 || c == 3);
        if (!corner) continue;
        const int rr = cw ? c : 3 - c;
        const int cc = cw ? 3 - r : r;
        out[4 * rr + cc] = in[4 * r + c];
      }
    return out;
  };
  for (const char* name : {"arc-expand-contract", "arc-rotate", "pcfg-add-subtract", "pcfg-repeat"}) {
    const Dataset ds = gen_task(name, n, seed);
    const std::string task(name);
    for (std::size_t i = 0; i < ds.rows(); ++i) {
      const Vector x = ds.feature_row(i);
      const Vector y = ds.label_row(i);
      const int cls = ds.groups[i];
      Vector want;
      if (task == "arc-expand-contract") {
        want = Vector::Zero(16);
        for (int r : {1, 2})
          for (int c : {1, 2}) {
            const int outer = 4 * (3 * (r - 1)) + 3 * (c - 1);
            const int inner = 4 * r + c;
            if (cls == 0) want[outer] = x[inner];
            else want[inner] = x[outer];
          }
      } else if (task == "arc-rotate") {
        want = rot(x, cls == 0);
      } else {
        want.resize(5);
        want.head(4) = x;
        const bool odd = static_cast<long>(x[0]) % 2 == 1;
        if (task == "pcfg-add-subtract") want[4] = odd ? x[3] + 1 : x[3] - 1;
        else want[4] = odd ? x[0] : x[1];
      }
      if (want.size() != y.size() || want != y) ++mismatches;
    }
  }
  return {"generators", mismatches == 0, {static_cast<double>(mismatches)}, {0.0},
          "4 tasks x n=" + std::to_string(n) + " rows re-derived from their inputs"};
}

/// Suites: all, posterior, theory, selectors, dopt, tasks.
[[nodiscard]] inline std::vector<CheckReport> run_verify(std::string_view suite, std::uint64_t seed) {
  static const std::set<std::string_view> known = {"all", "posterior", "theory", "selectors", "dopt", "tasks"};
  if (!known.contains(suite)) throw InvalidArgument("unknown verify suite '" + std::string(suite) + "'");
  const auto want = [&](std::string_view s) { return suite == "all" || suite == s; };
  std::vector<CheckReport> out;
  const Rng base(seed);
  if (want("posterior")) {
    out.push_back(check_sherman_morrison(base.split(1).next_u64()));
    out.push_back(check_monotonicity(base.split(2).next_u64()));
    out.push_back(check_supermodularity_witness());
  }
  if (want("theory")) {
    std::size_t idx = 0;
    for (Eigen::Index d : {2, 4, 8}) {
      for (std::size_t r = 0; r < 3; ++r, ++idx) {
        const std::size_t n = 24;
        const double beta = 1.0 / (4.0 * static_cast<double>(d) * static_cast<double>(n));
        const double alpha = std::sqrt(1.0 - beta);
        const auto inst = make_clustered_instance(alpha, beta, d, n / 2, n / 2, base.split(10 + idx).next_u64());
        auto go = check_go_bound(inst, 8);
        go.name += "[d=" + std::to_string(d) + "]";
        out.push_back(std::move(go));
        auto eig = check_eigen_bounds(inst, 8);
        eig.name += "[d=" + std::to_string(d) + "]";
        out.push_back(std::move(eig));
      }
    }
    for (double delta : {0.1, 0.05}) {
      for (std::size_t m : {std::size_t{50}, std::size_t{200},
                            static_cast<std::size_t>(std::ceil(8.0 * std::log(1.0 / delta)))}) {
        out.push_back(check_sal_concentration(0.5, 0.25, m, delta, 10000, base.split(50 + m).next_u64()));
      }
    }
  }
  if (want("selectors")) {
    out.push_back(check_greedy_vs_exhaustive(base.split(3).next_u64()));
    out.push_back(check_sal_matches_go(base.split(4).next_u64()));
  }
  if (want("dopt")) out.push_back(check_dopt(base.split(5).next_u64()));
  if (want("tasks")) out.push_back(check_generators(base.split(6).next_u64()));
  return out;
}

}  // namespace optdesign
