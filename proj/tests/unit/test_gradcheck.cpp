#include <doctest.h>

#include "cfaan/errors.hpp"
#include "cfaan/gradcheck.hpp"

using namespace cfaan;

TEST_CASE("gradient check suites pass and catch injected faults") {
  GradcheckOptions o;
  GradcheckReport r = run_gradchecks(o);
  CHECK(r.cases.size() == 6 * o.seeds);
  for (const auto& c : r.cases) {
    INFO(c.suite << " seed " << c.seed << " " << c.config << " worst " << c.worst_error << " in "
                 << c.worst_tensor);
    CHECK(c.passed);
    CHECK(c.checked > 0);
  }
  CHECK(r.passed());

  o.perturb_analytic = true;
  o.seeds = 1;
  GradcheckReport bad = run_gradchecks(o);
  CHECK_FALSE(bad.passed());
  for (const auto& c : bad.cases) CHECK_FALSE(c.passed);

  GradcheckOptions one;
  one.suites = {"triplet"};
  one.seed = 7;
  GradcheckReport a = run_gradchecks(one), b = run_gradchecks(one);
  REQUIRE(a.cases.size() == b.cases.size());
  for (std::size_t i = 0; i < a.cases.size(); ++i) CHECK(a.cases[i].worst_error == b.cases[i].worst_error);

  GradcheckOptions unknown;
  unknown.suites = {"conv"};
  CHECK_THROWS_AS(run_gradchecks(unknown), ConfigError);
}

TEST_CASE("relative error uses the floor") {
  Tensor a({3}, std::vector<double>{1.0, 1e-6, 0.0});
  Tensor n({3}, std::vector<double>{1.0 + 1e-6, 0.0, 2e-8});
  std::size_t at = 9;
  CHECK(max_relative_error(a, n, 1e-3, &at) == doctest::Approx(1e-3));
  CHECK(at == 1);
}
