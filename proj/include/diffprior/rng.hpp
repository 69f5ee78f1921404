#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace diffprior {

/// Seeded random stream with a cross-platform contract.
///
/// Uniform draws come from std::mt19937_64, whose output sequence is fixed by
/// the C++ standard. Doubles are formed from the top 53 bits of each word and
/// Gaussian draws use the Marsaglia polar method on those doubles, so the
/// stream does not depend on the standard library's distribution classes.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1).
  double uniform();
  /// Uniform on [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer on [0, n). n must be positive.
  std::uint64_t uniform_index(std::uint64_t n);
  /// Standard normal.
  double normal();
  void fill_normal(std::span<double> out);
  std::vector<double> normal_vector(std::size_t n);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Deterministic child seed for stream `index` of `base` (splitmix64 mixing).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

}  // namespace diffprior
