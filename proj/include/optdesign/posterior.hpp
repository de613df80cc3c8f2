#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "optdesign/error.hpp"

namespace optdesign {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// A labeled example (x, Y). Scalar labels are stored as length-1 vectors.
struct LabeledExample {
  Vector features;
  Vector label;
};

/// Query points x_{*,k} whose predictive uncertainty is being reduced.
class TestSet {
 public:
  TestSet() = default;
  explicit TestSet(std::vector<Vector> queries) : queries_(std::move(queries)) {
    if (queries_.empty()) throw InvalidArgument("test set must contain at least one query");
    const auto d = queries_.front().size();
    for (const auto& q : queries_) {
      if (q.size() != d) throw InvalidArgument("test queries have inconsistent dimensions");
    }
  }

  [[nodiscard]] std::size_t size() const noexcept { return queries_.size(); }
  [[nodiscard]] Eigen::Index dim() const noexcept {
    return queries_.empty() ? 0 : queries_.front().size();
  }
  [[nodiscard]] const Vector& operator[](std::size_t k) const { return queries_[k]; }
  [[nodiscard]] const std::vector<Vector>& queries() const noexcept { return queries_; }
  [[nodiscard]] auto begin() const noexcept { return queries_.begin(); }
  [[nodiscard]] auto end() const noexcept { return queries_.end(); }

 private:
  std::vector<Vector> queries_;
};

namespace detail {

inline bool all_finite(const Eigen::Ref<const Matrix>& m) { return m.allFinite(); }

inline void require_dim(Eigen::Index got, Eigen::Index want, const char* what) {
  if (got != want) {
    throw InvalidArgument(std::string(what) + ": dimension mismatch (got " + std::to_string(got) +
                          ", expected " + std::to_string(want) + ")");
  }
}

inline void symmetrize(Matrix& a) { a = (0.5 * (a + a.transpose())).eval(); }

/// Inverse of an SPD matrix via Cholesky; throws if the factorization fails.
inline Matrix spd_inverse(const Matrix& a, const char* what) {
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) throw InvalidArgument(std::string(what) + " not positive-definite");
  Matrix inv = llt.solve(Matrix::Identity(a.rows(), a.cols()));
  symmetrize(inv);
  return inv;
}

}  // namespace detail

/// Gaussian posterior of a Bayesian linear model Y = Θᵀx + ε, ε ~ N(0, σ² I).
///
/// Tracks the precision Λ_t = Σ₀⁻¹ + σ⁻² Σ x xᵀ and its inverse Σ̂_t. Each
/// update changes the covariance by a Sherman–Morrison rank-1 step in O(d²),
/// re-symmetrizes it, and every `rebuild_interval` updates re-derives it from
/// the precision by a Cholesky solve. Label dimension d_y is fixed at
/// construction by the number of columns of the prior mean; the covariance is
/// shared by every output column.
///
/// The object is a value: `update` returns a new state, `absorb` mutates in
/// place. All const members are safe to call concurrently.
class PosteriorState {
 public:
  static constexpr std::size_t kDefaultRebuildInterval = 256;

  /// d×d_y prior mean; prior_cov must be SPD; noise_var must be positive.
  PosteriorState(Matrix prior_mean, const Matrix& prior_cov, double noise_var,
                 std::size_t rebuild_interval = kDefaultRebuildInterval)
      : noise_var_(noise_var), rebuild_interval_(rebuild_interval) {
    const auto d = prior_mean.rows();
    if (d <= 0 || prior_mean.cols() <= 0) throw InvalidArgument("posterior dimension must be positive");
    if (prior_cov.rows() != d || prior_cov.cols() != d) {
      throw InvalidArgument("prior covariance shape does not match prior mean dimension");
    }
    if (!(noise_var > 0.0) || !std::isfinite(noise_var)) throw InvalidArgument("noise variance must be positive");
    if (!detail::all_finite(prior_mean) || !detail::all_finite(prior_cov)) {
      throw InvalidArgument("prior contains non-finite entries");
    }
    if ((prior_cov - prior_cov.transpose()).cwiseAbs().maxCoeff() >
        1e-12 * std::max(1.0, prior_cov.cwiseAbs().maxCoeff())) {
      throw InvalidArgument("prior covariance not positive-definite (asymmetric)");
    }
    if (rebuild_interval_ == 0) throw InvalidArgument("rebuild interval must be positive");
    prior_mean_ = std::move(prior_mean);
    covariance_ = prior_cov;
    detail::symmetrize(covariance_);
    precision_ = detail::spd_inverse(covariance_, "prior covariance");
    prior_weighted_mean_ = precision_ * prior_mean_;
    sum_xy_ = Matrix::Zero(d, prior_mean_.cols());
    mean_ = prior_mean_;
  }

  /// Scalar-label convenience constructor.
  PosteriorState(const Vector& prior_mean, const Matrix& prior_cov, double noise_var,
                 std::size_t rebuild_interval = kDefaultRebuildInterval)
      : PosteriorState(Matrix(prior_mean), prior_cov, noise_var, rebuild_interval) {}

  /// θ₀ = 0, Σ₀ = prior_var·I.
  [[nodiscard]] static PosteriorState isotropic(Eigen::Index dim, double prior_var, double noise_var,
                                                Eigen::Index label_dim = 1) {
    if (dim <= 0 || label_dim <= 0) throw InvalidArgument("posterior dimension must be positive");
    if (!(prior_var > 0.0)) throw InvalidArgument("prior covariance not positive-definite");
    return PosteriorState(Matrix(Matrix::Zero(dim, label_dim)), Matrix(prior_var * Matrix::Identity(dim, dim)),
                          noise_var);
  }

  [[nodiscard]] Eigen::Index dim() const noexcept { return prior_mean_.rows(); }
  [[nodiscard]] Eigen::Index label_dim() const noexcept { return prior_mean_.cols(); }
  [[nodiscard]] double noise_var() const noexcept { return noise_var_; }
  [[nodiscard]] std::size_t n_updates() const noexcept { return n_updates_; }
  [[nodiscard]] std::size_t rebuild_interval() const noexcept { return rebuild_interval_; }
  [[nodiscard]] const Matrix& covariance() const noexcept { return covariance_; }
  [[nodiscard]] const Matrix& precision() const noexcept { return precision_; }
  /// d×d_y posterior mean θ̂_t.
  [[nodiscard]] const Matrix& mean() const noexcept { return mean_; }
  [[nodiscard]] const Matrix& prior_mean() const noexcept { return prior_mean_; }
  [[nodiscard]] const Matrix& sum_xy() const noexcept { return sum_xy_; }

  [[nodiscard]] PosteriorState update(const LabeledExample& example) const {
    PosteriorState next = *this;
    next.absorb(example);
    return next;
  }

  /// Folds one labeled example into the state in place.
  void absorb(const LabeledExample& example) {
    const Vector& x = example.features;
    detail::require_dim(x.size(), dim(), "update features");
    detail::require_dim(example.label.size(), label_dim(), "update label");
    if (!x.allFinite()) throw InvalidArgument("update features contain non-finite entries");
    if (!example.label.allFinite()) throw InvalidArgument("update label contains non-finite entries");

    precision_.noalias() += (x * x.transpose()) / noise_var_;
    ++n_updates_;
    if (n_updates_ % rebuild_interval_ == 0) {
      covariance_ = detail::spd_inverse(precision_, "posterior precision");
    } else {
      const Vector cx = covariance_ * x;
      const double denom = noise_var_ + x.dot(cx);
      covariance_.noalias() -= (cx * cx.transpose()) / denom;
      detail::symmetrize(covariance_);
    }
    sum_xy_.noalias() += x * example.label.transpose();
    refresh_mean();
  }

  /// x_*ᵀ Σ̂_t x_* (parameter uncertainty only).
  [[nodiscard]] double posterior_variance(const Vector& query) const {
    detail::require_dim(query.size(), dim(), "posterior_variance");
    return query.dot(covariance_ * query);
  }

  /// x_*ᵀ Σ̂_t x_* + σ², the per-output variance of a fresh label at x_*.
  [[nodiscard]] double predictive_variance(const Vector& query) const {
    detail::require_dim(query.size(), dim(), "predictive_variance");
    return posterior_variance(query) + noise_var_;
  }

  /// Posterior-mean prediction Θ̂ᵀx_* (length d_y).
  [[nodiscard]] Vector predict_mean(const Vector& query) const {
    detail::require_dim(query.size(), dim(), "predict_mean");
    return mean_.transpose() * query;
  }

  /// max_k x_{*,k}ᵀ (Λ_t + σ⁻² x xᵀ)⁻¹ x_{*,k}, evaluated by Sherman–Morrison
  /// without touching the state. A zero candidate returns the current value.
  [[nodiscard]] double hypothetical_score(const Vector& candidate, const TestSet& queries) const {
    detail::require_dim(candidate.size(), dim(), "hypothetical_score candidate");
    detail::require_dim(queries.dim(), dim(), "hypothetical_score queries");
    const Vector cx = covariance_ * candidate;
    const double denom = noise_var_ + candidate.dot(cx);
    double worst = -std::numeric_limits<double>::infinity();
    for (const auto& q : queries) {
      const double proj = q.dot(cx);
      worst = std::max(worst, q.dot(covariance_ * q) - proj * proj / denom);
    }
    return worst;
  }

  /// max_k x_{*,k}ᵀ Σ̂_t x_{*,k}.
  [[nodiscard]] double max_posterior_variance(const TestSet& queries) const {
    double worst = -std::numeric_limits<double>::infinity();
    for (const auto& q : queries) worst = std::max(worst, posterior_variance(q));
    return worst;
  }

 private:
  void refresh_mean() { mean_ = covariance_ * (prior_weighted_mean_ + sum_xy_ / noise_var_); }

  double noise_var_;
  std::size_t rebuild_interval_;
  Matrix prior_mean_;
  Matrix prior_weighted_mean_;  // Σ₀⁻¹θ₀
  Matrix covariance_;
  Matrix precision_;
  Matrix mean_;
  Matrix sum_xy_;
  std::size_t n_updates_ = 0;
};

/// Folds a whole history into a copy of `prior`.
[[nodiscard]] inline PosteriorState posterior_from_history(const PosteriorState& prior,
                                                           std::span<const LabeledExample> history) {
  PosteriorState s = prior;
  for (const auto& ex : history) s.absorb(ex);
  return s;
}

/// f(S) = max_k x_{*,k}ᵀ (Σ₀⁻¹ + σ⁻² Σ_{i∈S} x_i x_iᵀ)⁻¹ x_{*,k}, by direct
/// inversion. Reference implementation; the selectors never call it.
[[nodiscard]] inline double subset_objective(std::span<const Vector> features, std::span<const std::size_t> subset,
                                             const TestSet& queries, const Matrix& prior_cov, double noise_var) {
  const auto d = prior_cov.rows();
  if (prior_cov.cols() != d) throw InvalidArgument("prior covariance must be square");
  if (!(noise_var > 0.0)) throw InvalidArgument("noise variance must be positive");
  detail::require_dim(queries.dim(), d, "subset_objective queries");
  Matrix info = detail::spd_inverse(prior_cov, "prior covariance");
  for (auto i : subset) {
    if (i >= features.size()) throw InvalidArgument("subset index out of range");
    detail::require_dim(features[i].size(), d, "subset_objective features");
    info.noalias() += features[i] * features[i].transpose() / noise_var;
  }
  const Matrix cov = detail::spd_inverse(info, "accumulated information");
  double worst = -std::numeric_limits<double>::infinity();
  for (const auto& q : queries) worst = std::max(worst, q.dot(cov * q));
  return worst;
}

}  // namespace optdesign
