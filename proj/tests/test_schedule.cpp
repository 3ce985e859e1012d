// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <random>

#include "support.hpp"

using namespace tiue;
using namespace tiue::testing;

TEST_CASE("schedule construction") {
  auto one = build_schedule(1, 0.1, 0.1, BetaKind::Linear);
  CHECK(one.alpha_bars().size() == 1);
  CHECK(one.alpha_bars()[0] == doctest::Approx(0.9).epsilon(1e-15));

  auto half = build_schedule(3, 0.5, 0.5, BetaKind::Linear);
  CHECK(half.alpha_bars()[0] == 0.5);
  CHECK(half.alpha_bars()[1] == 0.25);
  CHECK(half.alpha_bars()[2] == 0.125);

  auto lin = build_schedule(1000, 1e-4, 0.02, BetaKind::Linear);
  CHECK(lin.alpha_bars()[0] == doctest::Approx(0.9999).epsilon(1e-15));
  for (std::size_t i = 1; i < lin.alpha_bars().size(); ++i) CHECK(lin.alpha_bars()[i] < lin.alpha_bars()[i - 1]);

  auto scaled = build_schedule(ScheduleParams{});
  CHECK(scaled.betas().front() == doctest::Approx(8.5e-4).epsilon(1e-12));
  CHECK(scaled.betas().back() == doctest::Approx(1.2e-2).epsilon(1e-12));
  const double mid = std::sqrt(scaled.betas()[500]) - std::sqrt(scaled.betas()[499]);
  const double first = std::sqrt(scaled.betas()[1]) - std::sqrt(scaled.betas()[0]);
  CHECK(mid == doctest::Approx(first).epsilon(1e-9));
  CHECK(scaled.alpha_bar_final() == 1.0 - scaled.betas()[0]);
  CHECK(scaled.alpha_bar(kTerminal) == scaled.alpha_bar_final());

  for (auto bad : {std::tuple{0L, 0.1, 0.2}, std::tuple{10L, 0.0, 0.2}, std::tuple{10L, 0.3, 0.2}, std::tuple{10L, 0.1, 1.0}}) {
    try {
      build_schedule(std::get<0>(bad), std::get<1>(bad), std::get<2>(bad), BetaKind::Linear);
      FAIL("expected InvalidRange");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::InvalidRange);
    }
  }
}

TEST_CASE("ddim step hand values") {
  const auto sched = schedule_from_alpha_bars({0.99, 0.64, 0.25});
  Tensor<double> z(Shape{1}, 1.0), zero(Shape{1}), one(Shape{1}, 1.0);

  // alpha_bar_prev = 1 is not in the table, so evaluate the coefficients directly.
  const auto c = ddim_coeffs(0.25, 1.0);
  CHECK(c.scale * 1.0 + c.eps_coeff * 0.0 == doctest::Approx(2.0).epsilon(1e-15));

  const auto out = ddim_step(z, one, 2, 1, sched);
  CHECK(out[0] == doctest::Approx(1.6 + 0.8 * (std::sqrt(0.5625) - std::sqrt(3.0))).epsilon(1e-14));

  const auto same = ddim_step(z, one, 1, 1, sched);
  CHECK(same.bit_equal(z));

  try {
    ddim_step(z, one, 5, 1, sched);
    FAIL("expected InvalidTimestep");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidTimestep);
  }
  CHECK_THROWS_AS(ddim_step(z, Tensor<double>(Shape{2}), 2, 1, sched), Error);
}

TEST_CASE("ddim step is linear") {
  const auto sched = build_schedule(ScheduleParams{});
  const auto z = random_tensor<double>(Shape{10}, 1), e = random_tensor<double>(Shape{10}, 2);
  auto z3 = z, e3 = e;
  for (auto& v : z3.values()) v *= 3.0;
  for (auto& v : e3.values()) v *= 3.0;
  const auto a = ddim_step(z, e, 700, 300, sched), b = ddim_step(z3, e3, 700, 300, sched);
  for (std::int64_t i = 0; i < 10; ++i) CHECK(b[i] == doctest::Approx(3.0 * a[i]).epsilon(1e-13));
}

TEST_CASE("timestep selection") {
  CHECK(select_timesteps(4, 1000).timesteps == std::vector<std::int64_t>{999, 749, 499, 249});
  CHECK(select_timesteps(1, 1000).timesteps == std::vector<std::int64_t>{999});
  const auto all = select_timesteps(7, 7).timesteps;
  CHECK(all == std::vector<std::int64_t>{6, 5, 4, 3, 2, 1, 0});
  CHECK(select_timesteps(4, 1000).terminal == kTerminal);
  CHECK(select_timesteps(4, 1000, Spacing::Leading).timesteps == std::vector<std::int64_t>{750, 500, 250, 0});
  for (auto k : {0L, 1001L}) {
    try {
      select_timesteps(k, 1000);
      FAIL("expected InvalidK");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::InvalidK);
    }
  }
}

TEST_CASE("loop-free coefficients") {
  const auto sched = build_schedule(ScheduleParams{});

  SUBCASE("K=1 reduces to one ddim step") {
    const auto plan = make_plan(1, sched);
    const auto eps = random_tensor<double>(Shape{16}, 3), pred = random_tensor<double>(Shape{16}, 4);
    const std::vector<Tensor<double>> preds{pred};
    CHECK(combine_loopfree<double>(plan, eps, preds).bit_equal(ddim_step(eps, pred, plan.timesteps[0], kTerminal, sched)));
  }

  SUBCASE("K=4 equals the sequential chain") {
    const auto plan = make_plan(4, sched);
    std::vector<Tensor<double>> preds;
    for (int j = 0; j < 4; ++j) preds.push_back(random_tensor<double>(Shape{32}, 10 + j));
    const auto eps = random_tensor<double>(Shape{32}, 9);
    auto z = eps;
    for (std::size_t j = 0; j < 4; ++j) z = ddim_step(z, preds[j], plan.timesteps[j], plan.prev_of(j), sched);
    const auto closed = combine_loopfree<double>(plan, eps, preds);
    for (std::int64_t i = 0; i < 32; ++i) CHECK(closed[i] == doctest::Approx(z[i]).epsilon(1e-12));
  }

  SUBCASE("S matches its definition") {
    const auto plan = make_plan(4, sched);
    CHECK(plan.s == doctest::Approx(std::sqrt(sched.alpha_bar_final() / sched.alpha_bar(999))).epsilon(1e-15));
  }

  SUBCASE("flat schedule gives S=1 and zero E") {
    // A strictly decreasing table cannot be constant, so probe the coefficient algebra directly.
    const auto c = ddim_coeffs(0.3, 0.3);
    CHECK(c.scale == 1.0);
    CHECK(c.eps_coeff == 0.0);
  }

  SUBCASE("telescoping identity on random schedules against a long-double chain") {
    std::mt19937_64 gen(5);
    for (int trial = 0; trial < 30; ++trial) {
      const std::int64_t T = 20 + static_cast<std::int64_t>(gen() % 200);
      std::vector<double> ab;
      double a = 1.0;
      std::uniform_real_distribution<double> beta(1e-4, 0.05);
      for (std::int64_t t = 0; t < T; ++t) ab.push_back(a *= 1.0 - beta(gen));
      const auto s = schedule_from_alpha_bars(ab);
      const auto k = 1 + static_cast<std::int64_t>(gen() % 8);
      const auto plan = make_plan(k, s);
      std::vector<Tensor<double>> preds;
      std::vector<std::vector<long double>> lp;
      for (std::int64_t j = 0; j < k; ++j) {
        preds.push_back(random_tensor<double>(Shape{8}, gen()));
        lp.emplace_back(preds.back().values().begin(), preds.back().values().end());
      }
      const auto eps = random_tensor<double>(Shape{8}, gen());
      std::vector<double> abs_in_order;
      for (auto t : plan.timesteps) abs_in_order.push_back(s.alpha_bar(t));
      const auto ref = reference_ddim_chain({eps.values().begin(), eps.values().end()}, lp, abs_in_order, s.alpha_bar_final());
      const auto closed = combine_loopfree<double>(plan, eps, preds);
      for (std::int64_t i = 0; i < 8; ++i)
        CHECK(std::abs(closed[i] - static_cast<double>(ref[static_cast<std::size_t>(i)])) <=
              1e-10 * std::max(1.0, std::abs(static_cast<double>(ref[static_cast<std::size_t>(i)]))));
    }
  }
}

TEST_CASE("plan validation") {
  const auto sched = build_schedule(ScheduleParams{});
  auto plan = make_plan(4, sched);
  CHECK_NOTHROW(validate_plan(plan, sched));
  plan.e[1] += 1e-9;
  try {
    validate_plan(plan, sched);
    FAIL("expected InvalidPlan");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidPlan);
  }
  const auto small = build_schedule(100, 1e-3, 2e-2, BetaKind::Linear);
  CHECK_THROWS_AS(validate_plan(make_plan(4, sched), small), Error);
}
