#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "crossmoments/numeric.hpp"
#include "crossmoments/rng.hpp"

using namespace crossmoments;

TEST(Kernels, GaussCKernelMatchesDirectFormAwayFromZero) {
  for (double x : {0.6, 1.0, 3.0, 20.0}) {
    EXPECT_NEAR(numeric::gauss_c_kernel(x), (2 * x + 1) * (1 - std::exp(-x)) - x, 1e-14 * (1 + x));
  }
}

TEST(Kernels, GaussCKernelSeriesIsContinuousAtSwitch) {
  const double below = numeric::gauss_c_kernel(0.5 - 1e-12);
  const double above = numeric::gauss_c_kernel(0.5 + 1e-12);
  EXPECT_NEAR(below, above, 1e-11);
  // leading term 3x^2/2
  EXPECT_NEAR(numeric::gauss_c_kernel(1e-6) / 1.5e-12, 1.0, 1e-5);
}

TEST(Kernels, XMinusSinSmallArgument) {
  EXPECT_NEAR(numeric::x_minus_sin(1e-4) / (1e-12 / 6.0), 1.0, 1e-8);
  EXPECT_NEAR(numeric::x_minus_sin(0.49), 0.49 - std::sin(0.49), 1e-16);
  EXPECT_NEAR(numeric::x_minus_sin(-0.3), -(0.3 - std::sin(0.3)), 1e-16);
}

TEST(Kernels, SpectralCKernelIdentity) {
  for (double x : {0.01, 0.7, 2.0, 9.0}) {
    EXPECT_NEAR(numeric::spectral_c_kernel(x), x * x / 2 - x * std::sin(x) + 1 - std::cos(x),
                1e-13 * (1 + x * x));
  }
}

TEST(Quadrature, PanelsIntegrateGaussian) {
  const double v = numeric::integrate_panels([](double x) { return std::exp(-x * x / 2); }, -10, 10, 8);
  EXPECT_NEAR(v, std::sqrt(2 * kPi), 1e-13);
}

TEST(Fit, ExactLine) {
  std::vector<double> x{0, 1, 2, 3}, y{1, 3, 5, 7};
  const auto f = numeric::fit_line(x, y);
  EXPECT_NEAR(f.slope, 2.0, 1e-14);
  EXPECT_NEAR(f.intercept, 1.0, 1e-14);
  EXPECT_NEAR(f.slope_se, 0.0, 1e-12);
}

TEST(BatchMeans, IidDataSeMatchesClassical) {
  std::vector<double> v(4000);
  RandomStream rng(9, 0);
  for (auto& x : v) x = rng.normal();
  const auto s = numeric::batch_means(v);
  EXPECT_GE(s.batches, 20u);
  EXPECT_NEAR(s.se, std::sqrt(s.variance / v.size()), 0.5 * s.se);
}
