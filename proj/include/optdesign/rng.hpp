#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace optdesign {

/// SplitMix64 finalizer; used to derive independent child seeds.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Seeded, splittable random stream.
///
/// Every stochastic component of the library draws from an `Rng` so a run is a
/// pure function of its seed. `split(k)` yields a child stream that depends
/// only on the parent's seed and `k`, never on how much of the parent has been
/// consumed; this is what lets per-candidate and per-trial work run in any
/// order (or in parallel) without changing results. `draws()` counts the
/// variates handed out, for audit records.
class Rng {
 public:
  using result_type = std::mt19937_64::result_type;

  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(mix64(seed)) {}

  [[nodiscard]] Rng split(std::uint64_t stream) const {
    return Rng(mix64(seed_ ^ mix64(stream + 0x632be59bd9b4e019ULL)));
  }

  [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
  [[nodiscard]] std::uint64_t draws() const noexcept { return draws_; }

  double normal() {
    ++draws_;
    return normal_(engine_);
  }

  double uniform() {
    ++draws_;
    return std::uniform_real_distribution<double>(0.0, 1.0)(engine_);
  }

  /// Uniform integer in [0, n). n must be positive.
  std::size_t index(std::size_t n) {
    ++draws_;
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  std::uint64_t next_u64() {
    ++draws_;
    return engine_();
  }

  // UniformRandomBitGenerator, so std::shuffle and friends accept an Rng.
  static constexpr result_type min() { return std::mt19937_64::min(); }
  static constexpr result_type max() { return std::mt19937_64::max(); }
  result_type operator()() { return next_u64(); }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uint64_t draws_ = 0;
};

}  // namespace optdesign
