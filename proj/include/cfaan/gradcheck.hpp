#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cfaan/tensor.hpp"

namespace cfaan {

struct GradcheckOptions {
  std::size_t seeds = 5;         // configurations per suite
  std::uint64_t seed = 0;        // first seed
  double tolerance = 1e-4;       // on the relative error below
  double step = 1e-5;            // central-difference step
  double floor = 1e-3;           // denominator floor of the relative error
  bool perturb_analytic = false; // corrupt one analytic entry per case
  std::vector<std::string> suites;  // empty means every suite

  void validate() const;
};

/// Suite names in run order: nonlocal, axial, axial_ps, cfaa, triplet, cross_entropy.
const std::vector<std::string>& gradcheck_suites();

struct GradcheckCase {
  std::string suite;
  std::uint64_t seed = 0;
  std::string config;        // human-readable shape and options
  std::size_t checked = 0;   // number of gradient entries compared
  double worst_error = 0.0;
  std::string worst_tensor;  // tensor holding the worst entry
  std::size_t worst_index = 0;
  bool passed = false;
};

struct GradcheckReport {
  GradcheckOptions options;
  std::vector<GradcheckCase> cases;

  bool passed() const;
  /// Case with the largest error; the report must be non-empty.
  const GradcheckCase& worst() const;
};

GradcheckReport run_gradchecks(const GradcheckOptions& options);

/// Central differences of `loss` with respect to every entry of `t`.
Tensor finite_difference(Tensor& t, const std::function<double()>& loss, double step);

/// Largest |a - n| / max(|a|, |n|, floor) over all entries; `where` gets its index.
double max_relative_error(const Tensor& analytic, const Tensor& numeric, double floor,
                          std::size_t* where = nullptr);

}  // namespace cfaan
