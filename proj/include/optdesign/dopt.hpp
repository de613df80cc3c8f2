#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "optdesign/error.hpp"
#include "optdesign/posterior.hpp"

namespace optdesign {

struct DesignResult {
  std::vector<double> weights;
  /// max_j x_jᵀ M(π)⁻¹ x_j; equals d at the D-optimum (Kiefer–Wolfowitz).
  double certificate = 0.0;
  double log_det = 0.0;
  std::size_t iterations = 0;
};

inline constexpr double kDefaultDesignTol = 1e-3;
inline constexpr std::size_t kDefaultDesignMaxIters = 100000;

/// M(π) = Σ_i π(i) x_i x_iᵀ.
[[nodiscard]] inline Matrix information_matrix(std::span<const Vector> features, std::span<const double> weights) {
  const auto d = features.front().size();
  Matrix m = Matrix::Zero(d, d);
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (weights[i] != 0.0) m.noalias() += weights[i] * features[i] * features[i].transpose();
  }
  return m;
}

/// Numerical rank of the span of `features` (relative eigenvalue cut 1e-10).
[[nodiscard]] inline Eigen::Index feature_rank(std::span<const Vector> features) {
  if (features.empty()) return 0;
  const auto d = features.front().size();
  Matrix scatter = Matrix::Zero(d, d);
  for (const auto& x : features) scatter.noalias() += x * x.transpose();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(scatter, Eigen::EigenvaluesOnly);
  const double top = eig.eigenvalues().maxCoeff();
  if (!(top > 0.0)) return 0;
  return (eig.eigenvalues().array() > 1e-10 * top).count();
}

/// D-optimal design over `features` by multiplicative weight updates
/// π(i) ← π(i)·x_iᵀM(π)⁻¹x_i / d, started from the uniform design.
///
/// Stops when the Kiefer–Wolfowitz certificate max_j x_jᵀM⁻¹x_j is at most
/// d(1 + tol). Throws if the features do not span ℝᵈ or the iteration cap is
/// hit first.
[[nodiscard]] inline DesignResult solve_dopt(std::span<const Vector> features, double tol = kDefaultDesignTol,
                                             std::size_t max_iters = kDefaultDesignMaxIters) {
  if (features.empty()) throw InvalidArgument("design not identifiable: no features");
  if (!(tol > 0.0)) throw InvalidArgument("design tolerance must be positive");
  const auto d = features.front().size();
  for (const auto& x : features) {
    detail::require_dim(x.size(), d, "solve_dopt");
    if (!x.allFinite()) throw InvalidArgument("solve_dopt: non-finite features");
  }
  if (feature_rank(features) < d) throw InvalidArgument("design not identifiable: features do not span the space");

  const std::size_t n = features.size();
  const double dd = static_cast<double>(d);
  std::vector<double> pi(n, 1.0 / static_cast<double>(n));
  std::vector<double> g(n);
  DesignResult best;
  best.certificate = std::numeric_limits<double>::infinity();

  for (std::size_t iter = 0;; ++iter) {
    Eigen::LLT<Matrix> llt(information_matrix(features, pi));
    if (llt.info() != Eigen::Success) throw InvalidArgument("design not identifiable: singular information matrix");
    double cert = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      g[i] = features[i].dot(llt.solve(features[i]));
      cert = std::max(cert, g[i]);
    }
    if (cert < best.certificate) {
      best.weights = pi;
      best.certificate = cert;
      best.iterations = iter;
      best.log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    }
    if (cert <= dd * (1.0 + tol)) return best;
    if (iter >= max_iters) {
      throw Error("D-optimal design did not converge in " + std::to_string(max_iters) +
                  " iterations (best certificate " + std::to_string(best.certificate) + ", target " +
                  std::to_string(dd * (1.0 + tol)) + ")");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      pi[i] *= g[i] / dd;
      total += pi[i];
    }
    for (auto& p : pi) p /= total;
  }
}

}  // namespace optdesign
