#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "optdesign/dopt.hpp"
#include "optdesign/error.hpp"
#include "optdesign/oracles.hpp"
#include "optdesign/posterior.hpp"
#include "optdesign/rng.hpp"
#include "optdesign/selectors.hpp"

namespace optdesign {

/// Unit-norm features split into a close set S (pairwise xᵀy ≥ alpha, holding
/// the test queries) and a far set S̄ (|xᵀy| ≤ beta against every member of S).
struct ClusteredInstance {
  double alpha = 1.0;
  double beta = 0.0;
  Eigen::Index dim = 0;
  std::vector<Vector> features;
  /// in_close[i] is true iff features[i] ∈ S.
  std::vector<bool> in_close;
  TestSet queries;
  Vector center;

  [[nodiscard]] std::vector<Vector> close_members() const {
    std::vector<Vector> out;
    for (std::size_t i = 0; i < features.size(); ++i) {
      if (in_close[i]) out.push_back(features[i]);
    }
    for (const auto& q : queries) out.push_back(q);
    return out;
  }
};

struct CheckReport {
  std::string name;
  bool passed = false;
  std::vector<double> observed;
  std::vector<double> bound;
  std::string details;

  [[nodiscard]] nlohmann::json to_json() const {
    return {{"name", name}, {"passed", passed}, {"observed", observed}, {"bound", bound}, {"details", details}};
  }
};

inline constexpr double kTheoryTol = 1e-9;

namespace detail {

inline Vector random_unit(Eigen::Index d, Rng& rng) {
  for (;;) {
    Vector v(d);
    for (Eigen::Index i = 0; i < d; ++i) v[i] = rng.normal();
    const double n = v.norm();
    if (n > 1e-12) return v / n;
  }
}

/// Random unit vector in span(basis columns).
inline Vector random_unit_in(const Matrix& basis, Rng& rng) {
  return basis * random_unit(basis.cols(), rng);
}

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

}  // namespace detail

/// Worst violations of the instance invariants: (min S·S − alpha,
/// beta − max |S·S̄|, max |‖x‖ − 1|).
[[nodiscard]] inline std::array<double, 3> instance_slack(const ClusteredInstance& inst) {
  const auto close = inst.close_members();
  std::vector<Vector> far;
  for (std::size_t i = 0; i < inst.features.size(); ++i) {
    if (!inst.in_close[i]) far.push_back(inst.features[i]);
  }
  double within = std::numeric_limits<double>::infinity();
  double cross = -std::numeric_limits<double>::infinity();
  double norm_err = 0.0;
  for (std::size_t a = 0; a < close.size(); ++a) {
    for (std::size_t b = a + 1; b < close.size(); ++b) within = std::min(within, close[a].dot(close[b]));
    for (const auto& y : far) cross = std::max(cross, std::abs(close[a].dot(y)));
  }
  for (const auto& x : inst.features) norm_err = std::max(norm_err, std::abs(x.norm() - 1.0));
  for (const auto& q : inst.queries) norm_err = std::max(norm_err, std::abs(q.norm() - 1.0));
  const double within_slack = std::isinf(within) ? 0.0 : within - inst.alpha;
  const double cross_slack = std::isinf(cross) ? 0.0 : inst.beta - cross;
  return {within_slack, cross_slack, norm_err};
}

/// Builds an (alpha, beta)-clustered instance.
///
/// S is drawn from the spherical cap of half-angle arccos(√((1+alpha)/2))
/// about a random unit centre, so pairwise products are at least alpha. For
/// d ≥ 3 the cap lives in a subspace V of dimension max(2, d/2) and S̄ is
/// drawn from V⊥ plus a component in V of size at most beta/2 (beta = 0 gives
/// exact orthogonality). For d = 2 both sets are narrowed to arcs of
/// half-width asin(beta)/2 around the centre and its normal. Every draw is
/// verified and rejected on violation, up to 10⁶ draws.
[[nodiscard]] inline ClusteredInstance make_clustered_instance(double alpha, double beta, Eigen::Index d,
                                                               std::size_t n_close, std::size_t n_far,
                                                               std::uint64_t seed, std::size_t n_queries = 2) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw InvalidArgument("clustered instance: alpha must lie in (0, 1]");
  if (!(beta >= 0.0 && beta < 1.0)) throw InvalidArgument("clustered instance: beta must lie in [0, 1)");
  if (d < 1) throw InvalidArgument("clustered instance: dimension must be positive");
  if (n_queries == 0) throw InvalidArgument("clustered instance: need at least one query");
  if (d == 1 && n_far > 0) {
    throw InvalidArgument("clustered instance: far set infeasible in one dimension (|x·y| = 1 > beta)");
  }
  constexpr std::size_t kMaxDraws = 1000000;

  Rng rng(seed);
  ClusteredInstance inst;
  inst.alpha = alpha;
  inst.beta = beta;
  inst.dim = d;

  // Orthonormal basis with the centre first.
  Matrix q = Matrix::Zero(d, d);
  {
    Matrix g(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < d; ++j) g(i, j) = rng.normal();
    Eigen::HouseholderQR<Matrix> qr(g);
    q = qr.householderQ() * Matrix::Identity(d, d);
  }
  const Vector centre = q.col(0);
  inst.center = centre;

  double cap = std::acos(std::min(1.0, std::sqrt((1.0 + alpha) / 2.0)));
  double far_arc = 0.0;
  Eigen::Index close_dim = d;
  if (d == 2) {
    far_arc = std::asin(beta) / 2.0;
    cap = std::min(cap, far_arc);
  } else if (d >= 3) {
    close_dim = std::max<Eigen::Index>(2, d / 2);
  }
  const Matrix tangent = q.block(0, 1, d, std::max<Eigen::Index>(0, close_dim - 1));
  const Matrix close_basis = q.leftCols(close_dim);
  const Matrix far_basis = q.rightCols(d - close_dim);

  auto draw_close = [&]() -> Vector {
    if (cap <= 0.0 || tangent.cols() == 0) return centre;
    const double phi = cap * rng.uniform();
    return std::cos(phi) * centre + std::sin(phi) * detail::random_unit_in(tangent, rng);
  };

  std::size_t draws = 0;
  std::vector<Vector> close;
  while (close.size() < n_close + n_queries) {
    if (++draws > kMaxDraws) throw Error("clustered instance: rejection exhausted while sampling S (alpha)");
    Vector x = draw_close();
    x.normalize();
    bool ok = true;
    for (const auto& y : close) ok = ok && x.dot(y) >= alpha - 1e-12;
    if (ok) close.push_back(std::move(x));
  }

  const Vector normal = d >= 2 ? Vector(q.col(1)) : Vector();
  auto draw_far = [&]() -> Vector {
    if (d == 2) {
      const double psi = far_arc * (2.0 * rng.uniform() - 1.0);
      const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
      return sign * (std::cos(psi) * normal - std::sin(psi) * centre);
    }
    Vector y = detail::random_unit_in(far_basis, rng);
    const double eta = 0.5 * beta * rng.uniform();
    if (eta > 0.0) y += eta * detail::random_unit_in(close_basis, rng);
    return y.normalized();
  };

  std::vector<Vector> far;
  while (far.size() < n_far) {
    if (++draws > kMaxDraws) throw Error("clustered instance: rejection exhausted while sampling S-bar (beta)");
    Vector y = draw_far();
    bool ok = true;
    for (const auto& x : close) ok = ok && std::abs(x.dot(y)) <= beta + 1e-12;
    if (ok) far.push_back(std::move(y));
  }

  std::vector<Vector> qs(close.end() - static_cast<std::ptrdiff_t>(n_queries), close.end());
  close.resize(n_close);

  // Interleave S and S̄ in a seeded order so index tie-breaks carry no signal.
  std::vector<std::pair<Vector, bool>> all;
  for (auto& x : close) all.emplace_back(std::move(x), true);
  for (auto& y : far) all.emplace_back(std::move(y), false);
  std::shuffle(all.begin(), all.end(), rng);
  for (auto& [x, c] : all) {
    inst.features.push_back(std::move(x));
    inst.in_close.push_back(c);
  }
  inst.queries = TestSet(std::move(qs));

  const auto slack = instance_slack(inst);
  if (slack[0] < -kTheoryTol) throw Error("clustered instance: within-S products violate alpha");
  if (slack[1] < -kTheoryTol) throw Error("clustered instance: cross products violate beta");
  return inst;
}

/// Largest T for which greedy picks provably stay in S, α²/((β+√2)βd); infinite for β = 0.
[[nodiscard]] inline double greedy_horizon_cap(double alpha, double beta, Eigen::Index d) {
  if (beta <= 0.0) return std::numeric_limits<double>::infinity();
  return alpha * alpha / ((beta + std::sqrt(2.0)) * beta * static_cast<double>(d));
}

/// Upper bound 1/(α²T+1) + (1−α²) on the post-GO variance of every query.
[[nodiscard]] inline double go_variance_bound(double alpha, std::size_t T) {
  const double a2 = alpha * alpha;
  return 1.0 / (a2 * static_cast<double>(T) + 1.0) + (1.0 - a2);
}

/// Runs GO for T rounds (Σ₀ = I, σ = 1) and checks that every pick lies in S
/// and that max_k x_{*,k}ᵀΣ̂_{T+1}x_{*,k} obeys the variance bound. When T
/// exceeds greedy_horizon_cap the report is descriptive: it records the
/// outcome but passes regardless.
[[nodiscard]] inline CheckReport check_go_bound(const ClusteredInstance& inst, std::size_t T) {
  CheckReport rep;
  rep.name = "go_bound";
  const double cap = greedy_horizon_cap(inst.alpha, inst.beta, inst.dim);
  const bool precondition = static_cast<double>(T) <= cap;

  Pool pool(inst.features);
  PosteriorState state = PosteriorState::isotropic(inst.dim, 1.0, 1.0);
  std::size_t outside = 0;
  for (std::size_t t = 0; t < T && !pool.unlabeled().empty(); ++t) {
    const auto dec = select_go(state, pool, inst.queries);
    if (!inst.in_close[dec.chosen]) ++outside;
    Vector y = Vector::Zero(1);
    state.absorb({pool.feature(dec.chosen), y});
    pool.acquire(dec.chosen, y);
  }
  const double observed = state.max_posterior_variance(inst.queries);
  const double bound = go_variance_bound(inst.alpha, T);
  const bool ok = outside == 0 && observed <= bound + kTheoryTol;
  rep.observed = {observed, static_cast<double>(outside)};
  rep.bound = {bound, 0.0, cap};
  rep.passed = precondition ? ok : true;
  std::ostringstream os;
  os << "T=" << T << " d=" << inst.dim << " alpha=" << detail::fmt_double(inst.alpha)
     << " beta=" << detail::fmt_double(inst.beta) << " picks_outside_S=" << outside;
  if (!precondition) os << " precondition unmet (T > " << detail::fmt_double(cap) << "); descriptive run, bound "
                        << (ok ? "held" : "violated");
  rep.details = os.str();
  return rep;
}

/// Eigenvalue and eigenvector bounds after t−1 unit updates drawn from S.
[[nodiscard]] inline CheckReport check_eigen_bounds(const ClusteredInstance& inst, std::size_t t) {
  CheckReport rep;
  rep.name = "eigen_bounds";
  if (t == 0) throw InvalidArgument("eigen bounds: t must be >= 1");
  std::vector<Vector> close;
  for (std::size_t i = 0; i < inst.features.size(); ++i) {
    if (inst.in_close[i]) close.push_back(inst.features[i]);
  }
  const auto members = inst.close_members();
  if (close.empty() && t > 1) throw InvalidArgument("eigen bounds: instance has no close points");

  Matrix lambda = Matrix::Identity(inst.dim, inst.dim);
  for (std::size_t l = 0; l + 1 < t; ++l) {
    const Vector& x = close[l % close.size()];
    lambda.noalias() += x * x.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(lambda);
  const Vector evals = eig.eigenvalues().reverse();
  const Matrix evecs = eig.eigenvectors().rowwise().reverse();
  const double td = static_cast<double>(t);
  const double a2 = inst.alpha * inst.alpha;

  const double lo = evals.minCoeff();
  const double hi = evals.maxCoeff();
  const double top_bound = a2 * (td - 1.0) + 1.0;
  bool ok = lo >= 1.0 - kTheoryTol && hi <= td + kTheoryTol && evals[0] >= top_bound - kTheoryTol;

  double v1_min = std::numeric_limits<double>::quiet_NaN();
  double rest_max = std::numeric_limits<double>::quiet_NaN();
  const bool beta_regime = inst.beta >= 1.0 - a2 - 1e-12;
  std::ostringstream os;
  os << "t=" << t << " d=" << inst.dim;
  if (t >= 2) {
    Vector v1 = evecs.col(0);
    if (v1.dot(inst.center) < 0.0) v1 = -v1;
    v1_min = std::numeric_limits<double>::infinity();
    for (const auto& x : members) v1_min = std::min(v1_min, v1.dot(x));
    ok = ok && v1_min >= inst.alpha - kTheoryTol;
    if (beta_regime && inst.dim > 1) {
      rest_max = 0.0;
      for (Eigen::Index i = 1; i < inst.dim; ++i)
        for (const auto& x : members) rest_max = std::max(rest_max, std::abs(evecs.col(i).dot(x)));
      ok = ok && rest_max <= std::sqrt(std::max(0.0, 1.0 - a2)) + kTheoryTol;
    } else {
      os << " (beta < 1-alpha^2: trailing-eigenvector check skipped)";
    }
  } else {
    os << " (no updates: eigenvector checks vacuous)";
  }
  rep.observed = {lo, hi, evals[0], v1_min, rest_max};
  rep.bound = {1.0, td, top_bound, inst.alpha, std::sqrt(std::max(0.0, 1.0 - a2))};
  rep.passed = ok;
  rep.details = os.str();
  return rep;
}

/// Monte Carlo of the SAL variance estimator σ̂² = (1/m)Σ(Ỹ¹−Ỹ²)² with
/// Ỹ ~ N(μ, v+σ²) independent, so m·σ̂²/s² ~ χ²_m with s² = 2(v+σ²).
/// Checks the empirical rate of each one-sided concentration bound, and for
/// m ≥ 8 log(1/δ) the two-sided sandwich s²/2 ≤ σ̂² ≤ 5s²/2, against
/// δ + 3√(δ/trials).
[[nodiscard]] inline CheckReport check_sal_concentration(double v, double sigma2, std::size_t m, double delta,
                                                         std::size_t trials, std::uint64_t seed) {
  if (m == 0 || trials == 0) throw InvalidArgument("sal concentration: m and trials must be positive");
  if (!(delta > 0.0 && delta < 1.0)) throw InvalidArgument("sal concentration: delta must lie in (0, 1)");
  if (!(v >= 0.0 && sigma2 >= 0.0) || v + sigma2 <= 0.0) throw InvalidArgument("sal concentration: bad variances");
  CheckReport rep;
  rep.name = "sal_concentration";
  Rng rng(seed);
  const double sd = std::sqrt(v + sigma2);
  const double s2 = 2.0 * (v + sigma2);
  const double md = static_cast<double>(m);
  const double L = std::log(1.0 / delta);
  const double lower = s2 * (1.0 - 2.0 * std::sqrt(L / md));
  const double upper = s2 * (1.0 + 2.0 * std::sqrt(L / md) + 2.0 * L / md);
  const bool sandwich = md >= 8.0 * L;
  std::size_t low_hits = 0, high_hits = 0, sandwich_misses = 0;
  double last = 0.0;
  for (std::size_t r = 0; r < trials; ++r) {
    double acc = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double diff = sd * rng.normal() - sd * rng.normal();
      acc += diff * diff;
    }
    const double est = acc / md;
    last = est;
    if (est <= lower) ++low_hits;
    if (est >= upper) ++high_hits;
    if (est < 0.5 * s2 || est > 2.5 * s2) ++sandwich_misses;
  }
  const double tr = static_cast<double>(trials);
  const double allowed = delta + 3.0 * std::sqrt(delta / tr);
  const double low_rate = static_cast<double>(low_hits) / tr;
  const double high_rate = static_cast<double>(high_hits) / tr;
  const double sandwich_rate = static_cast<double>(sandwich_misses) / tr;
  rep.observed = {low_rate, high_rate, sandwich ? sandwich_rate : std::numeric_limits<double>::quiet_NaN(), last / s2};
  rep.bound = {allowed, allowed, allowed};
  rep.passed = low_rate <= allowed && high_rate <= allowed && (!sandwich || sandwich_rate <= allowed);
  std::ostringstream os;
  os << "m=" << m << " delta=" << delta << " trials=" << trials << " s2=" << detail::fmt_double(s2)
     << (sandwich ? " sandwich checked" : " sandwich skipped (m < 8 log(1/delta))");
  rep.details = os.str();
  return rep;
}

struct OptimumResult {
  std::vector<std::size_t> subset;
  double value = 0.0;
  std::size_t evaluated = 0;
};

/// n choose k, saturating at `cap` + 1.
[[nodiscard]] inline std::size_t bounded_binomial(std::size_t n, std::size_t k, std::size_t cap) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  long double c = 1.0L;
  for (std::size_t i = 1; i <= k; ++i) {
    c = c * static_cast<long double>(n - k + i) / static_cast<long double>(i);
    if (c > static_cast<long double>(cap)) return cap + 1;
  }
  return static_cast<std::size_t>(std::llround(static_cast<double>(c)));
}

/// Exhaustive argmin of f over all size-T subsets (ties: lexicographically first).
[[nodiscard]] inline OptimumResult brute_force_optimum(std::span<const Vector> features, const TestSet& queries,
                                                       std::size_t T, const Matrix& prior_cov, double noise_var) {
  constexpr std::size_t kGuard = 1000000;
  const std::size_t n = features.size();
  if (T > n) throw InvalidArgument("brute force: T exceeds the number of features");
  if (bounded_binomial(n, T, kGuard) > kGuard) {
    throw InvalidArgument("brute force: C(n, T) exceeds 1e6; use a smaller n or T");
  }
  OptimumResult best;
  best.value = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> idx(T);
  std::iota(idx.begin(), idx.end(), 0);
  for (;;) {
    const double f = subset_objective(features, idx, queries, prior_cov, noise_var);
    ++best.evaluated;
    if (f < best.value) {
      best.value = f;
      best.subset = idx;
    }
    // Next combination in lexicographic order.
    std::size_t i = T;
    while (i > 0 && idx[i - 1] == n - T + i - 1) --i;
    if (i == 0) break;
    ++idx[i - 1];
    for (std::size_t j = i; j < T; ++j) idx[j] = idx[j - 1] + 1;
  }
  return best;
}

// ---------------------------------------------------------------------------
// Property checks over random instances; these back the `verify` command.

namespace detail {

inline Matrix random_spd(Eigen::Index d, Rng& rng) {
  Matrix a(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) a(i, j) = rng.normal();
  return a * a.transpose() / static_cast<double>(d) + 0.1 * Matrix::Identity(d, d);
}

inline std::vector<Vector> random_features(std::size_t n, Eigen::Index d, Rng& rng, bool unit = false) {
  std::vector<Vector> out;
  for (std::size_t i = 0; i < n; ++i) {
    Vector x(d);
    for (Eigen::Index j = 0; j < d; ++j) x[j] = rng.normal();
    out.push_back(unit ? Vector(x.normalized()) : x);
  }
  return out;
}

}  // namespace detail

/// Sherman–Morrison covariance vs. direct inverse of the incremented precision.
[[nodiscard]] inline CheckReport check_sherman_morrison(std::uint64_t seed, std::size_t updates = 100,
                                                        Eigen::Index max_dim = 32) {
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t u = 0; u < updates; ++u) {
    const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(max_dim)));
    const double noise = 0.1 + rng.uniform();
    PosteriorState s(Vector(Vector::Zero(d)), detail::random_spd(d, rng), noise);
    for (int warm = 0; warm < 3; ++warm) s.absorb({detail::random_features(1, d, rng).front(), Vector::Zero(1)});
    const Vector x = detail::random_features(1, d, rng, true).front();
    const auto next = s.update({x, Vector::Zero(1)});
    const Matrix direct = (s.precision() + x * x.transpose() / noise).inverse();
    worst = std::max(worst, (next.covariance() - direct).norm() / direct.norm());
  }
  return {"sherman_morrison", worst <= 1e-8, {worst}, {1e-8}, std::to_string(updates) + " random rank-1 updates"};
}

/// f(S ∪ {j}) ≤ f(S) over random draws.
[[nodiscard]] inline CheckReport check_monotonicity(std::uint64_t seed, std::size_t draws = 1000) {
  Rng rng(seed);
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < draws; ++r) {
    const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng.index(6));
    const std::size_t n = 2 + rng.index(10);
    const auto xs = detail::random_features(n, d, rng);
    const TestSet tests(detail::random_features(1 + rng.index(3), d, rng));
    const Matrix prior = detail::random_spd(d, rng);
    const double noise = 0.05 + rng.uniform();
    std::vector<std::size_t> subset;
    for (std::size_t i = 0; i < n; ++i) {
      if (rng.uniform() < 0.4) subset.push_back(i);
    }
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < n; ++i) {
      if (std::find(subset.begin(), subset.end(), i) == subset.end()) rest.push_back(i);
    }
    if (rest.empty()) continue;
    auto bigger = subset;
    bigger.push_back(rest[rng.index(rest.size())]);
    const double gain = subset_objective(xs, bigger, tests, prior, noise) - subset_objective(xs, subset, tests, prior, noise);
    worst = std::max(worst, gain);
  }
  return {"monotonicity", worst <= 1e-12, {worst}, {1e-12}, std::to_string(draws) + " random (instance, S, j) draws"};
}

/// The two-point instance on which adding x₂ reduces the objective by 0 from
/// ∅ but by 0.035714 after x₁, so f(S₁∪{x})−f(S₁) ≤ f(S₂∪{x})−f(S₂) fails for
/// S₁ = ∅ ⊂ S₂ = {x₁}. Observed: f({2})−f(∅), f({1})−f({1,2}).
[[nodiscard]] inline CheckReport check_supermodularity_witness() {
  const double r = 1.0 / std::sqrt(2.0);
  const std::vector<Vector> xs = {(Vector(2) << r, r).finished(), (Vector(2) << 0.0, 1.0).finished()};
  const TestSet tests({(Vector(2) << 1.0, 0.0).finished()});
  const Matrix prior = Matrix::Identity(2, 2);
  auto f = [&](std::vector<std::size_t> s) { return subset_objective(xs, s, tests, prior, 1.0); };
  const double first = f({1}) - f({});
  const double reduction = f({0}) - f({0, 1});
  const bool violates = first > -reduction;
  const bool ok = std::abs(first) <= 1e-12 && reduction >= 0.0357 && reduction <= 0.0358 && violates;
  return {"non_supermodularity", ok, {first, reduction}, {0.0, 0.0357, 0.0358},
          "f({2})-f({}) = 0 while f({1})-f({1,2}) = 0.035714"};
}

/// Greedy GO vs. exhaustive optimum on random instances (ratio reported, no bound).
[[nodiscard]] inline CheckReport check_greedy_vs_exhaustive(std::uint64_t seed, std::size_t instances = 20,
                                                            std::size_t n = 10, Eigen::Index d = 3,
                                                            std::size_t T = 3, std::size_t K = 2) {
  Rng rng(seed);
  double ratio_sum = 0.0, ratio_max = 0.0;
  bool ok = true;
  for (std::size_t r = 0; r < instances; ++r) {
    const auto xs = detail::random_features(n, d, rng);
    const TestSet tests(detail::random_features(K, d, rng));
    Pool pool(xs);
    PosteriorState state = PosteriorState::isotropic(d, 1.0, 1.0);
    for (std::size_t t = 0; t < T; ++t) {
      const auto dec = select_go(state, pool, tests);
      state.absorb({pool.feature(dec.chosen), Vector::Zero(1)});
      pool.acquire(dec.chosen, Vector::Zero(1));
    }
    const double greedy = subset_objective(xs, pool.labeled(), tests, Matrix::Identity(d, d), 1.0);
    const auto opt = brute_force_optimum(xs, tests, T, Matrix::Identity(d, d), 1.0);
    ok = ok && greedy >= opt.value - 1e-12;
    ratio_sum += greedy / opt.value;
    ratio_max = std::max(ratio_max, greedy / opt.value);
  }
  const double mean_ratio = ratio_sum / static_cast<double>(instances);
  return {"greedy_vs_exhaustive", ok, {mean_ratio, ratio_max}, {1.0},
          "mean and max f(greedy)/f(S*) over " + std::to_string(instances) + " instances"};
}

/// Kiefer–Wolfowitz certificate of solve_dopt on random instances plus the
/// orthonormal-basis instance, whose optimum is uniform.
[[nodiscard]] inline CheckReport check_dopt(std::uint64_t seed, std::size_t instances = 20, std::size_t n = 20,
                                            Eigen::Index d = 4, double tol = kDefaultDesignTol) {
  Rng rng(seed);
  double worst_ratio = 0.0;
  for (std::size_t r = 0; r < instances; ++r) {
    const auto xs = detail::random_features(n, d, rng);
    const auto res = solve_dopt(xs, tol);
    worst_ratio = std::max(worst_ratio, res.certificate / static_cast<double>(d));
  }
  std::vector<Vector> basis;
  for (Eigen::Index i = 0; i < d; ++i) basis.push_back(Vector::Unit(d, i));
  const auto res = solve_dopt(basis, tol);
  double uniform_err = 0.0;
  for (double w : res.weights) uniform_err = std::max(uniform_err, std::abs(w - 1.0 / static_cast<double>(d)));
  const bool ok = worst_ratio <= 1.0 + tol && uniform_err <= 1e-6;
  return {"dopt_certificate", ok, {worst_ratio, uniform_err}, {1.0 + tol, 1e-6},
          "max certificate/d over random instances; basis-instance deviation from uniform"};
}

/// Spearman rank correlation (average ranks for ties).
[[nodiscard]] inline double spearman(std::span<const double> a, std::span<const double> b) {
  auto ranks = [](std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < order.size();) {
      std::size_t j = i;
      while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double mean = (n + 1.0) / 2.0;
  double num = 0.0, da = 0.0, db = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    num += (ra[i] - mean) * (rb[i] - mean);
    da += (ra[i] - mean) * (ra[i] - mean);
    db += (rb[i] - mean) * (rb[i] - mean);
  }
  return (da == 0.0 || db == 0.0) ? 0.0 : num / std::sqrt(da * db);
}

/// SAL with the exact linear-Gaussian oracle vs. GO on random instances:
/// chosen-index agreement rate and mean Spearman correlation of the scores.
[[nodiscard]] inline CheckReport check_sal_matches_go(std::uint64_t seed, std::size_t seeds = 50,
                                                      std::size_t m = 10000, std::size_t n = 10, Eigen::Index d = 3,
                                                      std::size_t K = 2, double noise_var = 0.25) {
  std::size_t agree = 0;
  double rho_sum = 0.0;
  for (std::size_t s = 0; s < seeds; ++s) {
    Rng rng = Rng(seed).split(s);
    const auto xs = detail::random_features(n, d, rng);
    const TestSet tests(detail::random_features(K, d, rng));
    Matrix theta(d, 1);
    for (Eigen::Index i = 0; i < d; ++i) theta(i, 0) = rng.normal();
    const auto oracle = LinearGaussianOracle::isotropic(theta, 1.0, noise_var);
    const PosteriorState state = PosteriorState::isotropic(d, 1.0, noise_var);
    const Pool pool(xs);
    SelectorConfig cfg;
    cfg.policy = Policy::SAL;
    cfg.m = m;
    cfg.prefilter = 0;
    const auto go = select_go(state, pool, tests);
    const auto sal = select_sal(state, pool, tests, oracle, cfg, rng);
    agree += go.chosen == sal.chosen ? 1 : 0;
    std::vector<double> a, b;
    for (std::size_t j = 0; j < go.scores.size(); ++j) {
      a.push_back(go.scores[j].second);
      b.push_back(sal.scores[j].second);
    }
    rho_sum += spearman(a, b);
  }
  const double rate = static_cast<double>(agree) / static_cast<double>(seeds);
  const double rho = rho_sum / static_cast<double>(seeds);
  return {"sal_matches_go", rate >= 0.9 && rho >= 0.95, {rate, rho}, {0.9, 0.95},
          "m=" + std::to_string(m) + " over " + std::to_string(seeds) + " seeds"};
}

}  // namespace optdesign
