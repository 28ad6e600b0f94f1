#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

namespace tsap {

/// xoshiro256** seeded through splitmix64. All distributions are computed
/// here rather than through <random> distributions so that streams are
/// reproducible across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  /// Independent stream derived from a seed and a tuple of keys, e.g.
  /// (seed, epoch, batch).
  static Rng stream(std::uint64_t seed, std::initializer_list<std::uint64_t> keys);

  std::uint64_t next();
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  double normal();
  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n);
  bool bernoulli(double p) { return uniform() < p; }

  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::uint64_t s_[4];
};

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t key);

}  // namespace tsap
