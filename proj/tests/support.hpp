#pragma once

// Hand-rolled generators and statistical oracles shared by the test binaries.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "optdesign/posterior.hpp"
#include "optdesign/rng.hpp"

namespace testing_support {

using optdesign::Matrix;
using optdesign::Vector;

/// Independent of optdesign::Rng so generated instances do not share its code path.
class Gen {
 public:
  explicit Gen(std::uint64_t seed) : eng_(seed) {}
  double normal() { return std::normal_distribution<double>()(eng_); }
  double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(eng_); }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(eng_); }
  std::uint64_t u64() { return eng_(); }

  Vector vec(Eigen::Index d) {
    Vector v(d);
    for (Eigen::Index i = 0; i < d; ++i) v[i] = normal();
    return v;
  }
  Vector unit(Eigen::Index d) {
    for (;;) {
      Vector v = vec(d);
      if (v.norm() > 1e-9) return v.normalized();
    }
  }
  Matrix spd(Eigen::Index d) {
    Matrix a(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < d; ++j) a(i, j) = normal();
    return a * a.transpose() / static_cast<double>(d) + 0.2 * Matrix::Identity(d, d);
  }
  std::vector<Vector> vecs(std::size_t n, Eigen::Index d) {
    std::vector<Vector> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(vec(d));
    return out;
  }
  std::vector<Vector> units(std::size_t n, Eigen::Index d) {
    std::vector<Vector> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(unit(d));
    return out;
  }

 private:
  std::mt19937_64 eng_;
};

/// f(S) by explicit inverse of the information matrix, independent of subset_objective.
inline double objective_oracle(const std::vector<Vector>& xs, const std::vector<std::size_t>& subset,
                               const std::vector<Vector>& queries, const Matrix& prior_cov, double noise) {
  Matrix a = prior_cov.inverse();
  for (auto i : subset) a += xs[i] * xs[i].transpose() / noise;
  const Matrix s = a.inverse();
  double worst = -1.0;
  for (const auto& q : queries) worst = std::max(worst, q.dot(s * q));
  return worst;
}

inline double normal_cdf(double x, double mean, double var) {
  return 0.5 * std::erfc(-(x - mean) / std::sqrt(2.0 * var));
}

/// Kolmogorov asymptotic tail Q(λ) = 2 Σ_{k≥1} (−1)^{k−1} exp(−2k²λ²).
inline double kolmogorov_q(double lambda) {
  if (lambda < 0.2) return 1.0;
  double sum = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += (k % 2 == 1 ? 1.0 : -1.0) * term;
    if (term < 1e-16) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

/// One-sample KS p-value (Stephens' small-sample correction).
inline double ks_pvalue(std::vector<double> xs, const std::function<double(double)>& cdf) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = cdf(xs[i]);
    d = std::max({d, f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f});
  }
  const double rn = std::sqrt(n);
  return kolmogorov_q((rn + 0.12 + 0.11 / rn) * d);
}

inline double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double var_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            (tag + "_" + std::to_string(std::random_device{}()) + "_" + std::to_string(counter()++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  [[nodiscard]] const std::filesystem::path& path() const { return path_; }
  [[nodiscard]] std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::filesystem::path path_;
};

inline Vector v2(double a, double b) { return (Vector(2) << a, b).finished(); }
inline Vector v1(double a) { return (Vector(1) << a).finished(); }

}  // namespace testing_support
