#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "optdesign/error.hpp"
#include "optdesign/posterior.hpp"
#include "optdesign/rng.hpp"

namespace optdesign {

struct OracleCapabilities {
  bool can_sample_predictions = false;
  /// Safe to call from several threads at once, each with its own Rng.
  bool concurrent_safe = false;
  /// Label width d_y; 1 for scalar labels.
  Eigen::Index label_dim = 1;
};

/// A source of labels and predictive samples, p(· | x, H).
///
/// Implementations must be deterministic given the same arguments and the
/// same Rng state.
class PredictiveOracle {
 public:
  virtual ~PredictiveOracle() = default;

  [[nodiscard]] virtual OracleCapabilities capabilities() const = 0;

  /// One label drawn from p(· | features, history).
  [[nodiscard]] virtual Vector sample_label(const Vector& features, std::span<const LabeledExample> history,
                                            Rng& rng) const = 0;

  /// n independent draws from p(· | query, history).
  [[nodiscard]] virtual std::vector<Vector> sample_prediction(const Vector& query,
                                                              std::span<const LabeledExample> history,
                                                              std::size_t n, Rng& rng) const = 0;
};

/// Exact simulator of the linear-Gaussian model.
///
/// Ground-truth labels are Θ_*ᵀx + ε with ε ~ N(0, σ² I). Predictive draws
/// condition a N(θ₀, Σ₀) prior on exactly the supplied history; since every
/// draw uses a fresh θ ~ N(θ̂, Σ̂), each output coordinate is sampled from its
/// exact marginal N(θ̂_cᵀx, xᵀΣ̂x + σ²).
///
/// σ² = 0 is accepted for label generation and for predictions from an empty
/// history; conditioning a noiseless model on data is rejected.
class LinearGaussianOracle final : public PredictiveOracle {
 public:
  LinearGaussianOracle(Matrix true_theta, Matrix prior_mean, Matrix prior_cov, double noise_var)
      : true_theta_(std::move(true_theta)),
        prior_mean_(std::move(prior_mean)),
        prior_cov_(std::move(prior_cov)),
        noise_var_(noise_var) {
    if (!(noise_var_ >= 0.0) || !std::isfinite(noise_var_)) throw InvalidArgument("noise variance must be >= 0");
    if (prior_mean_.rows() != true_theta_.rows() || prior_mean_.cols() != true_theta_.cols()) {
      throw InvalidArgument("prior mean shape does not match true parameter shape");
    }
    if (prior_cov_.rows() != prior_mean_.rows() || prior_cov_.cols() != prior_mean_.rows()) {
      throw InvalidArgument("prior covariance shape does not match dimension");
    }
    Eigen::LLT<Matrix> llt(prior_cov_);
    if (llt.info() != Eigen::Success) throw InvalidArgument("prior covariance not positive-definite");
    if (noise_var_ > 0.0) prior_.emplace(prior_mean_, prior_cov_, noise_var_);
  }

  /// θ₀ = 0, Σ₀ = prior_var·I.
  [[nodiscard]] static LinearGaussianOracle isotropic(Matrix true_theta, double prior_var, double noise_var) {
    const auto d = true_theta.rows();
    Matrix mean = Matrix::Zero(d, true_theta.cols());
    Matrix cov = prior_var * Matrix::Identity(d, d);
    return LinearGaussianOracle(std::move(true_theta), std::move(mean), std::move(cov), noise_var);
  }

  [[nodiscard]] OracleCapabilities capabilities() const override {
    return {.can_sample_predictions = true, .concurrent_safe = true, .label_dim = true_theta_.cols()};
  }

  [[nodiscard]] const Matrix& true_theta() const noexcept { return true_theta_; }
  [[nodiscard]] double noise_var() const noexcept { return noise_var_; }

  /// Θ_*ᵀx + ε.
  [[nodiscard]] Vector true_label(const Vector& features, Rng& rng) const {
    detail::require_dim(features.size(), true_theta_.rows(), "true_label");
    Vector y = true_theta_.transpose() * features;
    const double sd = std::sqrt(noise_var_);
    for (Eigen::Index c = 0; c < y.size(); ++c) y[c] += sd * rng.normal();
    return y;
  }

  [[nodiscard]] Vector sample_label(const Vector& features, std::span<const LabeledExample> history,
                                    Rng& rng) const override {
    auto draws = sample_prediction(features, history, 1, rng);
    return std::move(draws.front());
  }

  [[nodiscard]] std::vector<Vector> sample_prediction(const Vector& query, std::span<const LabeledExample> history,
                                                      std::size_t n, Rng& rng) const override {
    detail::require_dim(query.size(), true_theta_.rows(), "sample_prediction");
    std::vector<Vector> out;
    if (n == 0) return out;
    Vector centre;
    double var = 0.0;
    if (history.empty()) {
      centre = prior_mean_.transpose() * query;
      var = query.dot(prior_cov_ * query) + noise_var_;
    } else {
      if (!prior_) throw OracleError("noiseless linear-Gaussian oracle cannot condition on history");
      const PosteriorState post = posterior_from_history(*prior_, history);
      centre = post.predict_mean(query);
      var = post.predictive_variance(query);
    }
    const double sd = std::sqrt(std::max(var, 0.0));
    out.reserve(n);
    for (std::size_t s = 0; s < n; ++s) {
      Vector y = centre;
      for (Eigen::Index c = 0; c < y.size(); ++c) y[c] += sd * rng.normal();
      out.push_back(std::move(y));
    }
    return out;
  }

 private:
  Matrix true_theta_;
  Matrix prior_mean_;
  Matrix prior_cov_;
  double noise_var_;
  std::optional<PosteriorState> prior_;
};

/// Returns stored labels for known pool rows. Cannot simulate predictions.
class DatasetReplayOracle final : public PredictiveOracle {
 public:
  DatasetReplayOracle() = default;

  /// features[i] carries labels[i]. Rows must share one label width.
  DatasetReplayOracle(std::vector<Vector> features, std::vector<Vector> labels)
      : features_(std::move(features)), labels_(std::move(labels)) {
    if (features_.size() != labels_.size()) throw InvalidArgument("replay oracle: features/labels length mismatch");
    for (std::size_t i = 0; i < features_.size(); ++i) {
      if (labels_[i].size() != labels_.front().size()) throw InvalidArgument("replay oracle: ragged labels");
      by_features_.emplace(key(features_[i]), i);
    }
  }

  [[nodiscard]] OracleCapabilities capabilities() const override {
    return {.can_sample_predictions = false,
            .concurrent_safe = true,
            .label_dim = labels_.empty() ? 1 : labels_.front().size()};
  }

  [[nodiscard]] std::size_t size() const noexcept { return labels_.size(); }

  [[nodiscard]] const Vector& label_at(std::size_t index) const {
    if (index >= labels_.size()) throw OracleError("replay oracle: unknown pool index " + std::to_string(index));
    return labels_[index];
  }

  [[nodiscard]] Vector sample_label(const Vector& features, std::span<const LabeledExample>,
                                    Rng&) const override {
    const auto it = by_features_.find(key(features));
    if (it == by_features_.end()) throw OracleError("replay oracle: features do not match any pool row");
    return labels_[it->second];
  }

  [[nodiscard]] std::vector<Vector> sample_prediction(const Vector&, std::span<const LabeledExample>, std::size_t,
                                                      Rng&) const override {
    throw OracleError("oracle cannot simulate predictions");
  }

 private:
  static std::vector<double> key(const Vector& v) { return {v.data(), v.data() + v.size()}; }

  std::vector<Vector> features_;
  std::vector<Vector> labels_;
  // First row wins when features repeat.
  std::map<std::vector<double>, std::size_t> by_features_;
};

}  // namespace optdesign
