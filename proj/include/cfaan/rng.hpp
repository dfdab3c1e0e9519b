#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "cfaan/tensor.hpp"

namespace cfaan {

/// Seeded generator with platform-independent output.
///
/// The engine is std::mt19937_64, whose sequence is fixed by the standard.
/// Real-valued draws are derived from raw engine bits here rather than from
/// the <random> distributions, whose algorithms are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller (no cached second value).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[index(i)]);
  }

  /// Child generator for an independent stream.
  Rng fork() { return Rng(next_u64()); }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

/// Uniform in [-b, b] with b = 1/sqrt(fan_in).
Tensor init_uniform(Tensor::Shape shape, std::size_t fan_in, Rng& rng);
Tensor random_uniform(Tensor::Shape shape, double lo, double hi, Rng& rng);
Tensor random_normal(Tensor::Shape shape, double stddev, Rng& rng);

}  // namespace cfaan
