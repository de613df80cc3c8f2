#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>

#include "optdesign/dopt.hpp"
#include "optdesign/error.hpp"
#include "optdesign/oracles.hpp"
#include "optdesign/posterior.hpp"
#include "optdesign/rng.hpp"

namespace optdesign {

/// Training features with the labeled/unlabeled partition and the history
/// of acquired labels, in acquisition order.
class Pool {
 public:
  Pool() = default;
  explicit Pool(std::vector<Vector> features) : features_(std::move(features)) {
    for (const auto& x : features_) {
      if (x.size() != features_.front().size()) throw InvalidArgument("pool features have inconsistent dimensions");
      if (!x.allFinite()) throw InvalidArgument("pool features contain non-finite entries");
    }
    unlabeled_.resize(features_.size());
    for (std::size_t i = 0; i < unlabeled_.size(); ++i) unlabeled_[i] = i;
  }

  [[nodiscard]] std::size_t size() const noexcept { return features_.size(); }
  [[nodiscard]] Eigen::Index dim() const noexcept { return features_.empty() ? 0 : features_.front().size(); }
  [[nodiscard]] const std::vector<Vector>& features() const noexcept { return features_; }
  [[nodiscard]] const Vector& feature(std::size_t i) const { return features_.at(i); }
  [[nodiscard]] const std::vector<std::size_t>& labeled() const noexcept { return labeled_; }
  /// Ascending.
  [[nodiscard]] const std::vector<std::size_t>& unlabeled() const noexcept { return unlabeled_; }
  [[nodiscard]] const std::vector<LabeledExample>& history() const noexcept { return history_; }

  [[nodiscard]] bool is_unlabeled(std::size_t i) const {
    return std::binary_search(unlabeled_.begin(), unlabeled_.end(), i);
  }

  /// Moves `index` from U_t to L_t and records its label.
  void acquire(std::size_t index, Vector label) {
    const auto it = std::lower_bound(unlabeled_.begin(), unlabeled_.end(), index);
    if (it == unlabeled_.end() || *it != index) {
      throw InvalidArgument("pool index " + std::to_string(index) + " is not unlabeled");
    }
    unlabeled_.erase(it);
    labeled_.push_back(index);
    history_.push_back({features_[index], std::move(label)});
  }

 private:
  std::vector<Vector> features_;
  std::vector<std::size_t> labeled_;
  std::vector<std::size_t> unlabeled_;
  std::vector<LabeledExample> history_;
};

enum class Policy { GO, SAL, Uniform, GreedyXX, GreedyMX, GreedyMU, Least, MaxEnt, DOpt };
enum class GreedyVariant { XX, MX, MU };

[[nodiscard]] inline std::string_view policy_name(Policy p) {
  switch (p) {
    case Policy::GO: return "GO";
    case Policy::SAL: return "SAL";
    case Policy::Uniform: return "Uniform";
    case Policy::GreedyXX: return "GreedyXX";
    case Policy::GreedyMX: return "GreedyMX";
    case Policy::GreedyMU: return "GreedyMU";
    case Policy::Least: return "Least";
    case Policy::MaxEnt: return "MaxEnt";
    case Policy::DOpt: return "DOpt";
  }
  return "?";
}

[[nodiscard]] inline Policy parse_policy(std::string_view name) {
  for (Policy p : {Policy::GO, Policy::SAL, Policy::Uniform, Policy::GreedyXX, Policy::GreedyMX, Policy::GreedyMU,
                   Policy::Least, Policy::MaxEnt, Policy::DOpt}) {
    if (policy_name(p) == name) return p;
  }
  if (name == "Greedy") return Policy::GreedyXX;
  throw InvalidArgument("unknown selector policy '" + std::string(name) + "'");
}

/// True for policies that need `sample_prediction` from an oracle.
[[nodiscard]] constexpr bool needs_predictions(Policy p) {
  return p == Policy::SAL || p == Policy::Least || p == Policy::MaxEnt;
}

struct SelectorConfig {
  Policy policy = Policy::GO;
  /// SAL inner simulations per candidate.
  std::size_t m = 1;
  /// SAL scores only the `prefilter` best GO candidates; 0 scores all of U_t.
  std::size_t prefilter = 5;
  /// Least/MaxEnt predictive draws per test query.
  std::size_t r_samples = 10;
  /// Least/MaxEnt bucket continuous answers to this many decimals.
  int decimals = 2;
  double dopt_tol = kDefaultDesignTol;
  std::size_t dopt_max_iters = kDefaultDesignMaxIters;
  /// Candidate-scoring threads. Results never depend on this value.
  std::size_t workers = 1;
  std::uint64_t seed = 0;

  void validate() const {
    if (m == 0) throw InvalidArgument("selector config: m must be >= 1");
    if (r_samples == 0) throw InvalidArgument("selector config: r_samples must be >= 1");
    if (decimals < 0 || decimals > 12) throw InvalidArgument("selector config: decimals must be in [0, 12]");
    if (!(dopt_tol > 0.0)) throw InvalidArgument("selector config: dopt tolerance must be positive");
    if (workers == 0) throw InvalidArgument("selector config: workers must be >= 1");
  }
};

struct SelectorDecision {
  std::size_t chosen = 0;
  /// (pool index, score) for every scored candidate, ascending index.
  std::vector<std::pair<std::size_t, double>> scores;
  std::uint64_t rng_draws = 0;
};

namespace detail {

inline void require_candidates(const Pool& pool) {
  if (pool.unlabeled().empty()) throw InvalidArgument("pool exhausted");
}

/// Runs fn(j) for j in [0, count) on up to `workers` threads.
inline void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::min(workers, count);
  if (workers <= 1) {
    for (std::size_t j = 0; j < count; ++j) fn(j);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> threads;
    threads.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      threads.emplace_back([&, w] {
        try {
          for (std::size_t j = w; j < count; j += workers) fn(j);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// Lowest-index optimum; `better(a, b)` is a strict preference.
template <class Better>
std::size_t best_position(std::span<const double> scores, Better better) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < scores.size(); ++j) {
    if (better(scores[j], scores[best])) best = j;
  }
  return best;
}

inline SelectorDecision make_decision(std::span<const std::size_t> candidates, std::vector<double> scores,
                                      std::size_t best) {
  SelectorDecision out;
  out.chosen = candidates[best];
  out.scores.reserve(candidates.size());
  for (std::size_t j = 0; j < candidates.size(); ++j) out.scores.emplace_back(candidates[j], scores[j]);
  return out;
}

inline std::vector<std::int64_t> bucket(const Vector& answer, int decimals) {
  const double scale = std::pow(10.0, decimals);
  std::vector<std::int64_t> key(static_cast<std::size_t>(answer.size()));
  for (Eigen::Index c = 0; c < answer.size(); ++c) {
    key[static_cast<std::size_t>(c)] = static_cast<std::int64_t>(std::llround(answer[c] * scale));
  }
  return key;
}

/// Bucketed answer counts of one batch of predictive draws.
inline std::map<std::vector<std::int64_t>, std::size_t> answer_histogram(std::span<const Vector> draws,
                                                                         int decimals) {
  std::map<std::vector<std::int64_t>, std::size_t> hist;
  for (const auto& y : draws) ++hist[bucket(y, decimals)];
  return hist;
}

inline void require_prediction_capability(const PredictiveOracle& oracle) {
  if (!oracle.capabilities().can_sample_predictions) throw OracleError("oracle cannot simulate predictions");
}

inline std::size_t effective_workers(std::size_t workers, const PredictiveOracle& oracle) {
  return oracle.capabilities().concurrent_safe ? workers : 1;
}

}  // namespace detail

/// GO scores f(L_t ∪ {i}) of the given candidates.
[[nodiscard]] inline std::vector<double> go_scores(const PosteriorState& state, const Pool& pool, const TestSet& tests,
                                                   std::span<const std::size_t> candidates,
                                                   std::size_t workers = 1) {
  std::vector<double> scores(candidates.size());
  detail::parallel_for(candidates.size(), workers, [&](std::size_t j) {
    scores[j] = state.hypothetical_score(pool.feature(candidates[j]), tests);
  });
  return scores;
}

/// G-optimal greedy step: argmin over U_t of max_k x_{*,k}ᵀ(Λ_t + σ⁻²x_i x_iᵀ)⁻¹x_{*,k}.
/// Never reads labels.
[[nodiscard]] inline SelectorDecision select_go(const PosteriorState& state, const Pool& pool, const TestSet& tests,
                                                std::size_t workers = 1) {
  detail::require_candidates(pool);
  const auto& cand = pool.unlabeled();
  auto scores = go_scores(state, pool, tests, cand, workers);
  const auto best = detail::best_position(scores, std::less<>{});
  return detail::make_decision(cand, std::move(scores), best);
}

/// Simulated uncertainty after labeling `candidate`:
/// max_k (1/m) Σ_j ‖Ỹ⁽ʲ¹⁾ − Ỹ⁽ʲ²⁾‖², each pair drawn given H_t ∪ {(x, Y⁽ʲ⁾)}.
[[nodiscard]] inline double sal_score(const PredictiveOracle& oracle, std::span<const LabeledExample> history,
                                      const Vector& candidate, const TestSet& tests, std::size_t m, Rng& rng) {
  std::vector<LabeledExample> extended(history.begin(), history.end());
  extended.push_back({candidate, Vector()});
  std::vector<double> acc(tests.size(), 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    extended.back().label = oracle.sample_label(candidate, history, rng);
    for (std::size_t k = 0; k < tests.size(); ++k) {
      const auto pair = oracle.sample_prediction(tests[k], extended, 2, rng);
      if (pair.size() != 2) throw OracleError("oracle returned a wrong number of predictive samples");
      acc[k] += (pair[0] - pair[1]).squaredNorm();
    }
  }
  return *std::max_element(acc.begin(), acc.end()) / static_cast<double>(m);
}

/// Simulation-based selection. With cfg.prefilter > 0 only the prefilter best
/// GO candidates are simulated. Candidate i draws from rng-derived stream i,
/// so results do not depend on cfg.workers.
[[nodiscard]] inline SelectorDecision select_sal(const PosteriorState& state, const Pool& pool, const TestSet& tests,
                                                 const PredictiveOracle& oracle, const SelectorConfig& cfg, Rng& rng) {
  cfg.validate();
  detail::require_candidates(pool);
  detail::require_prediction_capability(oracle);
  const auto before = rng.draws();

  std::vector<std::size_t> cand = pool.unlabeled();
  if (cfg.prefilter > 0 && cfg.prefilter < cand.size()) {
    const auto go = go_scores(state, pool, tests, cand, cfg.workers);
    std::vector<std::size_t> order(cand.size());
    for (std::size_t j = 0; j < order.size(); ++j) order[j] = j;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return go[a] < go[b]; });
    std::vector<std::size_t> kept;
    for (std::size_t j = 0; j < cfg.prefilter; ++j) kept.push_back(cand[order[j]]);
    std::sort(kept.begin(), kept.end());
    cand = std::move(kept);
  }

  const Rng round_rng(rng.next_u64());
  const std::size_t round = pool.labeled().size() + 1;
  std::vector<double> scores(cand.size());
  std::vector<std::uint64_t> draws(cand.size());
  detail::parallel_for(cand.size(), detail::effective_workers(cfg.workers, oracle), [&](std::size_t j) {
    Rng local = round_rng.split(cand[j]);
    try {
      scores[j] = sal_score(oracle, pool.history(), pool.feature(cand[j]), tests, cfg.m, local);
    } catch (const OracleError& e) {
      throw OracleError("SAL round " + std::to_string(round) + ", candidate " + std::to_string(cand[j]) + ": " +
                        e.what());
    }
    draws[j] = local.draws();
  });
  const auto best = detail::best_position(scores, std::less<>{});
  auto out = detail::make_decision(cand, std::move(scores), best);
  out.rng_draws = rng.draws() - before;
  for (auto d : draws) out.rng_draws += d;
  return out;
}

[[nodiscard]] inline SelectorDecision select_uniform(const Pool& pool, Rng& rng) {
  detail::require_candidates(pool);
  const auto& cand = pool.unlabeled();
  SelectorDecision out;
  out.chosen = cand[rng.index(cand.size())];
  out.rng_draws = 1;
  return out;
}

/// Feature-similarity baselines. XX: max_k ⟨x_{*,k}, x_i⟩. MX: min_k.
/// MU: the inner product with the query k minimizing |⟨x_{*,k}, x_i⟩ − avg_k⟨x_{*,k}, x_i⟩|.
[[nodiscard]] inline SelectorDecision select_greedy(const Pool& pool, const TestSet& tests, GreedyVariant variant) {
  detail::require_candidates(pool);
  detail::require_dim(tests.dim(), pool.dim(), "select_greedy");
  const auto& cand = pool.unlabeled();
  std::vector<double> scores(cand.size());
  std::vector<double> ip(tests.size());
  for (std::size_t j = 0; j < cand.size(); ++j) {
    const Vector& x = pool.feature(cand[j]);
    for (std::size_t k = 0; k < tests.size(); ++k) ip[k] = tests[k].dot(x);
    switch (variant) {
      case GreedyVariant::XX: scores[j] = *std::max_element(ip.begin(), ip.end()); break;
      case GreedyVariant::MX: scores[j] = *std::min_element(ip.begin(), ip.end()); break;
      case GreedyVariant::MU: {
        double avg = 0.0;
        for (double v : ip) avg += v;
        avg /= static_cast<double>(ip.size());
        std::size_t closest = 0;
        for (std::size_t k = 1; k < ip.size(); ++k) {
          if (std::abs(ip[k] - avg) < std::abs(ip[closest] - avg)) closest = k;
        }
        scores[j] = ip[closest];
        break;
      }
    }
  }
  const auto best = detail::best_position(scores, std::greater<>{});
  return detail::make_decision(cand, std::move(scores), best);
}

namespace detail {

/// Shared body of Least and MaxEnt: for each candidate draw ŷ_i ~ p(·|x_i, H_t),
/// then r draws per query conditioned on {(x_i, ŷ_i)} alone, and score the
/// per-query answer histograms.
template <class HistogramScore>
SelectorDecision select_by_disagreement(const Pool& pool, const TestSet& tests, const PredictiveOracle& oracle,
                                        std::size_t r_samples, int decimals, std::size_t workers, Rng& rng,
                                        HistogramScore score_of) {
  require_candidates(pool);
  require_prediction_capability(oracle);
  if (r_samples == 0) throw InvalidArgument("r_samples must be >= 1");
  const auto before = rng.draws();
  const auto& cand = pool.unlabeled();
  const Rng round_rng(rng.next_u64());
  std::vector<double> scores(cand.size());
  std::vector<std::uint64_t> draws(cand.size());
  parallel_for(cand.size(), effective_workers(workers, oracle), [&](std::size_t j) {
    Rng local = round_rng.split(cand[j]);
    const Vector& x = pool.feature(cand[j]);
    const LabeledExample context{x, oracle.sample_label(x, pool.history(), local)};
    double s = 0.0;
    for (const auto& q : tests) {
      const auto answers = oracle.sample_prediction(q, std::span(&context, 1), r_samples, local);
      s += score_of(answer_histogram(answers, decimals), answers.size());
    }
    scores[j] = s;
    draws[j] = local.draws();
  });
  const auto best = best_position(scores, std::greater<>{});
  auto out = make_decision(cand, std::move(scores), best);
  out.rng_draws = rng.draws() - before;
  for (auto d : draws) out.rng_draws += d;
  return out;
}

}  // namespace detail

/// Disagreement baseline: Σ_k (number of distinct bucketed answers), argmax.
[[nodiscard]] inline SelectorDecision select_least_confidence(const Pool& pool, const TestSet& tests,
                                                              const PredictiveOracle& oracle, std::size_t r_samples,
                                                              Rng& rng, int decimals = 2, std::size_t workers = 1) {
  return detail::select_by_disagreement(pool, tests, oracle, r_samples, decimals, workers, rng,
                                        [](const auto& hist, std::size_t) { return static_cast<double>(hist.size()); });
}

/// Entropy of the empirical (bucketed) answer distribution, summed over queries; argmax.
[[nodiscard]] inline SelectorDecision select_max_entropy(const Pool& pool, const TestSet& tests,
                                                         const PredictiveOracle& oracle, std::size_t r_samples,
                                                         Rng& rng, int decimals = 2, std::size_t workers = 1) {
  return detail::select_by_disagreement(pool, tests, oracle, r_samples, decimals, workers, rng,
                                        [](const auto& hist, std::size_t total) {
                                          double h = 0.0;
                                          for (const auto& [answer, count] : hist) {
                                            const double p = static_cast<double>(count) / static_cast<double>(total);
                                            h -= p * std::log(p);
                                          }
                                          return h;
                                        });
}

/// Samples I_t ~ π_t, the D-optimal design over U_t. When the unlabeled
/// features no longer span ℝᵈ the design is solved inside their span.
[[nodiscard]] inline SelectorDecision select_dopt(const Pool& pool, Rng& rng, double tol = kDefaultDesignTol,
                                                  std::size_t max_iters = kDefaultDesignMaxIters) {
  detail::require_candidates(pool);
  const auto& cand = pool.unlabeled();
  std::vector<Vector> xs;
  xs.reserve(cand.size());
  for (auto i : cand) xs.push_back(pool.feature(i));

  const auto rank = feature_rank(xs);
  if (rank == 0) throw InvalidArgument("design not identifiable: all unlabeled features are zero");
  if (rank < pool.dim()) {
    Matrix scatter = Matrix::Zero(pool.dim(), pool.dim());
    for (const auto& x : xs) scatter.noalias() += x * x.transpose();
    Eigen::SelfAdjointEigenSolver<Matrix> eig(scatter);
    const Matrix basis = eig.eigenvectors().rightCols(rank);
    for (auto& x : xs) x = (basis.transpose() * x).eval();
  }
  const DesignResult design = solve_dopt(xs, tol, max_iters);

  const auto before = rng.draws();
  const double u = rng.uniform();
  double cum = 0.0;
  std::size_t pick = cand.size() - 1;
  for (std::size_t j = 0; j < cand.size(); ++j) {
    cum += design.weights[j];
    if (u < cum) {
      pick = j;
      break;
    }
  }
  auto out = detail::make_decision(cand, design.weights, pick);
  out.rng_draws = rng.draws() - before;
  return out;
}

/// Dispatches one selection round. `oracle` may be null for policies that
/// never sample (GO, Uniform, Greedy*, DOpt).
[[nodiscard]] inline SelectorDecision select(const SelectorConfig& cfg, const PosteriorState& state, const Pool& pool,
                                             const TestSet& tests, const PredictiveOracle* oracle, Rng& rng) {
  cfg.validate();
  if (needs_predictions(cfg.policy) && oracle == nullptr) {
    throw OracleError(std::string(policy_name(cfg.policy)) + " requires a predictive oracle");
  }
  switch (cfg.policy) {
    case Policy::GO: return select_go(state, pool, tests, cfg.workers);
    case Policy::SAL: return select_sal(state, pool, tests, *oracle, cfg, rng);
    case Policy::Uniform: return select_uniform(pool, rng);
    case Policy::GreedyXX: return select_greedy(pool, tests, GreedyVariant::XX);
    case Policy::GreedyMX: return select_greedy(pool, tests, GreedyVariant::MX);
    case Policy::GreedyMU: return select_greedy(pool, tests, GreedyVariant::MU);
    case Policy::Least:
      return select_least_confidence(pool, tests, *oracle, cfg.r_samples, rng, cfg.decimals, cfg.workers);
    case Policy::MaxEnt:
      return select_max_entropy(pool, tests, *oracle, cfg.r_samples, rng, cfg.decimals, cfg.workers);
    case Policy::DOpt: return select_dopt(pool, rng, cfg.dopt_tol, cfg.dopt_max_iters);
  }
  throw InvalidArgument("unhandled selector policy");
}

}  // namespace optdesign
