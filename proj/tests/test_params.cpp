#include <doctest.h>

#include "bladefl/params.hpp"
#include "support.hpp"

using namespace bladefl;

TEST_CASE("derive_rates hand values") {
  HardwareModel hw{2, 10, 1, 1, 512};
  CHECK(derive_rates(hw, 20).beta == doctest::Approx(1.0));

  HardwareModel train{1, 1, 512, 1, 512};
  CHECK(derive_rates(train, 20).alpha == doctest::Approx(1.0));

  HardwareModel zero{0, 10, 1, 1, 512};
  CHECK_ERROR(derive_rates(zero, 20), ErrorCode::NonPositiveParameter);
  CHECK_ERROR(derive_rates(hw, 0), ErrorCode::NonPositiveParameter);
}

TEST_CASE("compute_tau") {
  CHECK(compute_tau(100, 10, 1, 6) == 4);
  CHECK(compute_tau(100, 5, 2, 10) == 5);
  CHECK_ERROR(compute_tau(100, 10, 1, 10), ErrorCode::InsufficientBudget);
  CHECK_ERROR(compute_tau(100, 0, 1, 1), ErrorCode::NonPositiveParameter);
  CHECK_ERROR(compute_tau(100, 1, -1, 1), ErrorCode::NonPositiveParameter);
  // (0.3 - 0.1) / 0.1 rounds below 2 in floating point; 2 * 0.1 + 0.1 also
  // overshoots 0.3, so the floor of 1 is the settled answer.
  CHECK(compute_tau(0.3, 1, 0.1, 0.1) == 1);
}

TEST_CASE("feasible_k_range") {
  KRange r = feasible_k_range(100, 1, 6);
  CHECK(r.k_min == 1);
  CHECK(r.k_max == 14);
  r = feasible_k_range(7, 1, 6);
  CHECK(r.k_max == 1);
  CHECK_ERROR(feasible_k_range(6, 1, 6), ErrorCode::InsufficientBudget);
}

TEST_CASE("floor accounting brackets the budget") {
  for (double t_sum : {7.0, 13.5, 60.0, 100.0}) {
    for (double alpha : {0.3, 1.0, 2.0}) {
      for (double beta : {0.5, 4.0, 6.0}) {
        if (t_sum < alpha + beta) continue;
        const KRange r = feasible_k_range(t_sum, alpha, beta);
        for (int k = r.k_min; k <= r.k_max; ++k) {
          const int tau = compute_tau(t_sum, k, alpha, beta);
          CHECK(k * (tau * alpha + beta) <= t_sum);
          CHECK(t_sum < k * ((tau + 1) * alpha + beta));
        }
        CHECK_ERROR(compute_tau(t_sum, r.k_max + 1, alpha, beta), ErrorCode::InsufficientBudget);
      }
    }
  }
}

TEST_CASE("SystemParams validation") {
  SystemParams p;
  p.rounds = 6;
  CHECK_NOTHROW(p.validate());
  CHECK(p.local_iters() == 6);
  CHECK(p.leftover() == doctest::Approx(0.0));

  SystemParams bad = p;
  bad.n_lazy = 11;
  CHECK_ERROR(bad.validate(), ErrorCode::InvalidParameter);
  bad = p;
  bad.noise_var = -1;
  CHECK_ERROR(bad.validate(), ErrorCode::InvalidParameter);
  bad = p;
  bad.eta = 0;
  CHECK_ERROR(bad.validate(), ErrorCode::NonPositiveParameter);
  bad = p;
  bad.rounds = 13;
  CHECK_ERROR(bad.validate(), ErrorCode::InsufficientBudget);
  CHECK_NOTHROW(bad.validate_static());

  p.rounds = 7;  // tau = 4, 7 * (4 + 4) = 56
  CHECK(p.leftover() == doctest::Approx(4.0));
}

TEST_CASE("BoundConstants default epsilon") {
  BoundConstants c;
  c.xi = 2.0;
  c.delta = 3.0;
  c.phi = 0.5;
  CHECK(c.eps_sq() == doctest::Approx(12.0));
  c.epsilon_sq = 0.25;
  CHECK(c.eps_sq() == 0.25);
  BoundConstants bad;
  bad.xi = 0.0;
  CHECK_ERROR(bad.validate(), ErrorCode::NonPositiveParameter);
}
