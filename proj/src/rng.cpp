#include "cfaan/rng.hpp"

#include <cmath>
#include <numbers>

#include "cfaan/errors.hpp"

namespace cfaan {

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::index(std::size_t n) {
  if (n == 0) throw ConfigError("Rng::index: empty range");
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t v = engine_();
  while (v >= limit) v = engine_();
  return static_cast<std::size_t>(v % n);
}

Tensor init_uniform(Tensor::Shape shape, std::size_t fan_in, Rng& rng) {
  if (fan_in == 0) throw ConfigError("init_uniform: fan_in must be positive");
  const double b = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return random_uniform(std::move(shape), -b, b, rng);
}

Tensor random_uniform(Tensor::Shape shape, double lo, double hi, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

Tensor random_normal(Tensor::Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = stddev * rng.normal();
  return t;
}

}  // namespace cfaan
