#include "test_util.hpp"

using namespace bbdrec;
using bbdrec::testing::rel;

TEST(Schedule, PeakIsMAtMidpoint) {
  const auto s = build_schedule(10, 0.1);
  EXPECT_EQ(s.delta[5], 0.1);
  EXPECT_EQ(s.delta[0], 0.0);
  EXPECT_EQ(s.delta[10], 0.0);
  EXPECT_EQ(s.beta[0], 0.0);
  EXPECT_EQ(s.beta[10], 1.0);
}

TEST(Schedule, StepTwoValues) {
  const auto s = build_schedule(10, 0.1);
  EXPECT_NEAR(s.gamma[2], 8.0 / 9.0, 1e-15);
  EXPECT_NEAR(s.delta_hat[2], 0.0355556, 1e-7);
  EXPECT_NEAR(s.delta_hat[2], 0.32 / 9.0, 1e-15);
  EXPECT_NEAR(s.delta_tilde[2], 0.02, 1e-15);
}

TEST(Schedule, PosteriorCoefficientExamples) {
  const auto s = build_schedule(10, 0.1);
  const auto p2 = posterior_coefficients(s, 2);
  EXPECT_NEAR(p2.coef_x, 0.5, 1e-14);
  EXPECT_NEAR(p2.coef_0, 0.5, 1e-14);
  EXPECT_NEAR(p2.coef_T, 0.0, 1e-14);
  EXPECT_NEAR(p2.variance, 0.02, 1e-15);

  const auto p1 = posterior_coefficients(s, 1);
  EXPECT_EQ(p1.coef_x, 0.0);
  EXPECT_EQ(p1.coef_0, 1.0);
  EXPECT_EQ(p1.coef_T, 0.0);
  EXPECT_EQ(p1.variance, 0.0);

  const auto p10 = posterior_coefficients(s, 10);
  EXPECT_EQ(p10.coef_x, 0.0);
  EXPECT_NEAR(p10.coef_0, 0.1, 1e-15);
  EXPECT_NEAR(p10.coef_T, 0.9, 1e-15);
  EXPECT_NEAR(p10.variance, 0.036, 1e-15);
}

TEST(Schedule, RejectsBadArguments) {
  EXPECT_THROW(build_schedule(1, 0.1), std::invalid_argument);
  EXPECT_THROW(build_schedule(0, 0.1), std::invalid_argument);
  EXPECT_THROW(build_schedule(10, 0.0), std::invalid_argument);
  EXPECT_THROW(build_schedule(10, -1.0), std::invalid_argument);
  EXPECT_THROW(build_schedule(10, std::nan("")), std::invalid_argument);
  EXPECT_THROW(build_schedule(10, INFINITY), std::invalid_argument);
  const auto s = build_schedule(10, 0.1);
  EXPECT_THROW(posterior_coefficients(s, 0), std::out_of_range);
  EXPECT_THROW(posterior_coefficients(s, 11), std::out_of_range);
}

class ScheduleGrid : public ::testing::TestWithParam<std::tuple<int, double>> {};

TEST_P(ScheduleGrid, Invariants) {
  const auto [T, m] = GetParam();
  const auto s = build_schedule(T, m);
  double a = 1.0, v = 0.0;
  for (int t = 1; t <= T; ++t) {
    // delta_t = delta_hat_t + gamma_t^2 delta_{t-1}
    EXPECT_LE(rel(s.delta_hat[t] + s.gamma[t] * s.gamma[t] * s.delta[t - 1], s.delta[t]) , 1e-12) << t;
    const auto pc = posterior_coefficients(s, t);
    EXPECT_NEAR(pc.coef_x + pc.coef_0 + pc.coef_T, 1.0, 1e-12) << t;
    EXPECT_GE(s.delta_hat[t], 0.0);
    EXPECT_GE(s.delta_tilde[t], 0.0);
    a *= s.gamma[t];
    v = s.gamma[t] * s.gamma[t] * v + s.delta_hat[t];
    EXPECT_NEAR(a, 1.0 - s.beta[t], 1e-12) << t;
    EXPECT_NEAR(v, s.delta[t], 1e-12 * m) << t;
  }
  for (int t = 0; t <= T; ++t) {
    EXPECT_EQ(s.delta[t], s.delta[T - t]) << t;
    EXPECT_LE(s.delta[t], m);
  }
  // maximum over integer t sits at floor(T/2) and ceil(T/2)
  const auto peak = std::max_element(s.delta.begin(), s.delta.end()) - s.delta.begin();
  EXPECT_TRUE(peak == T / 2 || peak == (T + 1) / 2);
  EXPECT_EQ(s.delta[T / 2], s.delta[(T + 1) / 2]);
  if (T % 2 == 0) {
    EXPECT_EQ(s.delta[T / 2], m);
  }
}

INSTANTIATE_TEST_SUITE_P(All, ScheduleGrid,
                         ::testing::Combine(::testing::Values(2, 3, 5, 10, 11, 100, 2000),
                                            ::testing::Values(1.0, 1e-1, 1e-2, 1e-4)));
