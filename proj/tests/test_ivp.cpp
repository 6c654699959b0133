#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "decode/ivp.hpp"

using namespace decode;
using namespace decode::ivp;
using decode::ad::Matrix;

namespace {
auto grow = [](double, double y) -> double { return y; };
auto still = [](double, double) -> double { return 0.0; };

// Least-squares slope of log error against log step size.
double order_slope(Method m) {
  std::vector<double> lx, ly;
  for (int n : {8, 16, 32, 64, 128}) {
    const double y = integrate_fixed<double>(m, grow, 1.0, 0.0, 1.0 / n, n);
    lx.push_back(std::log(1.0 / n));
    ly.push_back(std::log(std::abs(y - std::exp(1.0))));
  }
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) mx += lx[i], my += ly[i];
  mx /= lx.size();
  my /= ly.size();
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxy += (lx[i] - mx) * (ly[i] - my);
    sxx += (lx[i] - mx) * (lx[i] - mx);
  }
  return sxy / sxx;
}
}  // namespace

TEST(Ivp, EulerSteps) {
  EXPECT_DOUBLE_EQ(step_euler<double>(grow, 1.0, 0.0, 1.0), 2.0);
  EXPECT_DOUBLE_EQ(step_euler<double>(still, 3.0, 0.0, 1.0), 3.0);
  auto clock = [](double t, double) -> double { return t; };
  EXPECT_DOUBLE_EQ(step_euler<double>(clock, 0.0, 2.0, 0.5), 1.0);
}

TEST(Ivp, Rk4Steps) {
  EXPECT_NEAR(step_rk4<double>(grow, 1.0, 0.0, 1.0), 1.0 + (1.0 + 3.0 + 3.5 + 2.75) / 6.0, 1e-15);
  EXPECT_NEAR(step_rk4<double>(grow, 1.0, 0.0, 1.0), 2.708333333333333, 1e-12);
  EXPECT_DOUBLE_EQ(step_rk4<double>(still, 3.0, 0.0, 1.0), 3.0);
  auto constant = [](double, double) -> double { return 2.5; };
  EXPECT_DOUBLE_EQ(step_rk4<double>(constant, 1.0, 0.0, 0.4), 2.0);
}

TEST(Ivp, IntervalIntegration) {
  const SolverConfig rk{Method::rk4, 64};
  EXPECT_DOUBLE_EQ(integrate_interval<double>(grow, 1.5, 2.0, 2.0, rk), 1.5);
  auto one = [](double, double) -> double { return 1.0; };
  for (int steps : {1, 3, 16}) {
    EXPECT_NEAR(integrate_interval<double>(one, 0.25, 2.0, 5.0, SolverConfig{Method::euler, steps}), 3.25, 1e-12);
  }
  EXPECT_NEAR(integrate_interval<double>(grow, 1.0, 0.0, 1.0, rk), std::exp(1.0), 1e-8);
  EXPECT_THROW((void)integrate_interval<double>(grow, 1.0, 1.0, 0.0, rk), std::invalid_argument);
}

TEST(Ivp, ConvergenceOrders) {
  EXPECT_NEAR(order_slope(Method::euler), 1.0, 0.3);
  EXPECT_NEAR(order_slope(Method::rk4), 4.0, 0.3);
}

TEST(Ivp, MatrixStatesAdvanceRowwise) {
  Matrix y(2, 1);
  y << 1.0, 2.0;
  auto f = [](double, const Matrix& s) -> Matrix { return s; };
  const Matrix out = integrate_interval<Matrix>(f, y, 0.0, 1.0, SolverConfig{Method::rk4, 32});
  EXPECT_NEAR(out(0, 0), std::exp(1.0), 1e-6);
  EXPECT_NEAR(out(1, 0), 2 * std::exp(1.0), 1e-6);
}

TEST(Ivp, NonFiniteFieldReportsStep) {
  auto bad = [](double t, double) -> double { return t > 0.5 ? NAN : 1.0; };
  try {
    (void)integrate_fixed<double>(Method::euler, bad, 0.0, 0.0, 0.25, 4);
    FAIL();
  } catch (const SolverError& e) {
    EXPECT_EQ(e.step(), 3);
  }
}

TEST(Ivp, StageWeightsSumToOne) {
  for (Method m : {Method::euler, Method::rk4}) {
    double s = 0;
    for (double w : stage_weights(m)) s += w;
    EXPECT_DOUBLE_EQ(s, 1.0);
  }
  EXPECT_EQ(method_from_string(to_string(Method::rk4)), Method::rk4);
}
