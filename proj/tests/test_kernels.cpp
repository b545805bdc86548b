#include <doctest.h>

#include <cmath>

#include "latesim/kernels.hpp"
#include "latesim/reference.hpp"
#include "test_helpers.hpp"

using namespace latesim;
using namespace latesim::testing;

// The blocked kernel must agree with the serial triple loop across shapes,
// including the ragged tails of the 8/4/1-row blocking.
TEST_CASE("blocked maxsim equals the serial reference on 1000 random instances") {
  Rng rng(101);
  const std::size_t dims[] = {4, 8, 128};
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t d = dims[i % 3];
    const std::size_t t = 1 + rng.below(64);
    const std::size_t m = 1 + rng.below(64);
    const auto q = random_unit_multi(rng, t, d);
    const auto p = random_unit_multi(rng, m, d);
    const double ref = maxsim_reference(q.data(), t, p.data(), m, d);
    const double opt = maxsim(q.data(), t, p.data(), m, d);
    worst = std::max(worst, std::fabs(ref - opt));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("blocked maxsim handles every blocking tail") {
  Rng rng(103);
  for (std::size_t t = 1; t <= 20; ++t) {
    for (const std::size_t m : {1, 2, 7}) {
      const auto q = random_unit_multi(rng, t, 16);
      const auto p = random_unit_multi(rng, std::size_t(m), 16);
      const double ref = maxsim_reference(q.data(), t, p.data(), m, 16);
      const double opt = maxsim(q.data(), t, p.data(), m, 16);
      CHECK(std::fabs(ref - opt) < 1e-9);
    }
  }
}

TEST_CASE("kernel results are reproducible call to call") {
  Rng rng(107);
  const auto q = random_unit_multi(rng, 13, 32);
  const auto p = random_unit_multi(rng, 21, 32);
  const double first = maxsim(q.data(), 13, p.data(), 21, 32);
  for (int i = 0; i < 5; ++i) {
    CHECK(maxsim(q.data(), 13, p.data(), 21, 32) == first);
  }
}
