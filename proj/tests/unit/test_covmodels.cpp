#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "crossmoments/covmodels.hpp"

using namespace crossmoments;

namespace {

std::vector<CovarianceModel1D> shipped_models() {
  return {CovarianceModel1D::gaussian_exp(),      CovarianceModel1D::gaussian_exp(0.4),
          CovarianceModel1D::sine_cosine(2.0),    CovarianceModel1D::matern_like(1.5),
          CovarianceModel1D::matern_like(3.5, 2), CovarianceModel1D::cauchy(2.0, 0.7),
          CovarianceModel1D::log_tail(1.5),       CovarianceModel1D::log_tail(3.0, 0.5)};
}

// Tabulated Matern spectral density (1 + lambda^2)^{-nu - 1/2} on a log grid.
SpectralDensity matern_table(double nu, int n = 3000) {
  std::vector<double> f, v;
  for (int i = 0; i < n; ++i) {
    const double lam = std::pow(10.0, -4.0 + 8.0 * i / (n - 1));
    f.push_back(lam);
    v.push_back(std::pow(1.0 + lam * lam, -nu - 0.5));
  }
  return SpectralDensity(f, v, 2 * nu + 1);
}

}  // namespace

TEST(EvalCov, GaussianExpAtZero) {
  const auto m = CovarianceModel1D::gaussian_exp();
  const auto c = m.eval(0.0);
  EXPECT_EQ(c.r, 1.0);
  EXPECT_EQ(c.dr, 0.0);
  EXPECT_EQ(c.d2r, -1.0);
}

TEST(EvalCov, SineCosineAtZero) {
  const auto c = CovarianceModel1D::sine_cosine(2.0).eval(0.0);
  EXPECT_EQ(c.r, 1.0);
  EXPECT_EQ(c.dr, 0.0);
  EXPECT_EQ(c.d2r, -4.0);
}

TEST(EvalCov, GaussianExpAtOne) {
  const auto c = CovarianceModel1D::gaussian_exp().eval(1.0);
  EXPECT_DOUBLE_EQ(c.r, std::exp(-0.5));
  EXPECT_DOUBLE_EQ(c.dr, -std::exp(-0.5));
  EXPECT_NEAR(c.d2r, 0.0, 1e-16);
}

TEST(EvalCov, GenericMixturePathMatchesClosedForms) {
  // Cauchy and GaussianExp have closed forms; the mixture quadrature must agree.
  for (const auto& m : {CovarianceModel1D::cauchy(2.0, 0.7), CovarianceModel1D::cauchy(0.6, 1.3)}) {
    for (double tau : {1e-3, 0.1, 0.8, 2.5, 7.0}) {
      const auto closed = m.eval(tau);
      const auto t = m.terms(tau);
      EXPECT_NEAR(1.0 - t.A, closed.r, 1e-12);
      EXPECT_NEAR(-t.B, closed.dr, 1e-12);
      EXPECT_NEAR(t.D - m.lambda2(), closed.d2r, 1e-11);
    }
  }
}

TEST(EvalCov, MaternMixtureMatchesBessel) {
  for (double nu : {1.2, 1.5, 2.5, 4.0}) {
    const auto m = CovarianceModel1D::matern_like(nu, 0.8);
    for (double tau : {1e-4, 0.05, 0.5, 1.7, 6.0}) {
      EXPECT_NEAR(1.0 - m.terms(tau).A, m.matern_closed_form(tau), 1e-12) << nu << " " << tau;
      EXPECT_NEAR(m.cov(tau), m.matern_closed_form(tau), 1e-14);
    }
  }
}

TEST(EvalCov, NumericalDerivativesAgree) {
  for (const auto& m : shipped_models()) {
    for (double tau : {0.3, 1.1}) {
      const double h = 1e-5;
      const auto c = m.eval(tau);
      const double d1 = (m.eval(tau + h).r - m.eval(tau - h).r) / (2 * h);
      const double d2 = (m.eval(tau + h).dr - m.eval(tau - h).dr) / (2 * h);
      EXPECT_NEAR(c.dr, d1, 1e-7 * (1 + std::abs(d1))) << m.name();
      EXPECT_NEAR(c.d2r, d2, 1e-6 * (1 + std::abs(d2))) << m.name();
    }
  }
}

TEST(SpectralMoment, GaussianExp) {
  const auto m = CovarianceModel1D::gaussian_exp();
  EXPECT_DOUBLE_EQ(m.spectral_moment(2).value, 1.0);
  EXPECT_DOUBLE_EQ(m.spectral_moment(4).value, 3.0);
}

TEST(SpectralMoment, SineCosineSaturatesCauchySchwarz) {
  const auto m = CovarianceModel1D::sine_cosine(1.7);
  EXPECT_DOUBLE_EQ(m.spectral_moment(4).value, std::pow(1.7, 4));
  EXPECT_DOUBLE_EQ(m.lambda4().value, m.lambda2() * m.lambda2());
}

TEST(SpectralMoment, MaternClosedForms) {
  const auto m = CovarianceModel1D::matern_like(3.0);
  EXPECT_NEAR(m.lambda2(), 1.0 / (2 * (3.0 - 1)), 1e-14);
  EXPECT_NEAR(m.lambda4().value, 3.0 / (4 * 2 * 1), 1e-13);
  EXPECT_TRUE(CovarianceModel1D::matern_like(1.8).lambda4().infinite);
  EXPECT_TRUE(CovarianceModel1D::log_tail(1.5).lambda4().infinite);
}

TEST(SpectralMoment, LambdaFourDominatesSquare) {
  for (const auto& m : shipped_models()) {
    const auto l4 = m.lambda4();
    if (l4.infinite) continue;
    if (m.kind() == ModelKind::SineCosine) {
      EXPECT_DOUBLE_EQ(l4.value, m.lambda2() * m.lambda2());
    } else {
      EXPECT_GT(l4.value, m.lambda2() * m.lambda2() * (1 + 1e-6)) << m.name();
    }
  }
}

TEST(SpectralMoment, LogTailLambdaTwoMatchesDirectIntegral) {
  // E[s] against a plain quadrature of s * density over y plus the analytic tail.
  for (double beta : {1.5, 3.0}) {
    const auto m = CovarianceModel1D::log_tail(beta, 0.7);
    const auto* law = m.mixing();
    const double body = numeric::integrate_panels(
        [&](double y) { return std::exp(y) * law->density_y(y); }, -30.0, 40.0, 700);
    EXPECT_NEAR(body + law->tail_mean(40.0), m.lambda2(), 1e-10 * m.lambda2());
    const double mass = numeric::integrate_panels([&](double y) { return law->density_y(y); }, -30.0,
                                                  40.0, 700);
    EXPECT_NEAR(mass + law->tail_mass(40.0), 1.0, 1e-10);
  }
}

TEST(SpectralMoment, LogTailCurvatureConvergesLogarithmically) {
  // 2A/tau^2 -> lambda2 but the gap decays only like |log tau|^(1-beta).
  const auto m = CovarianceModel1D::log_tail(1.5);
  double prev_gap = kInf;
  for (int k = 4; k <= 40; k += 6) {
    const double tau = std::ldexp(1.0, -k);
    const double gap = m.lambda2() - 2 * m.terms(tau).A / (tau * tau);
    EXPECT_GT(gap, 0.0);
    EXPECT_LT(gap, prev_gap);
    prev_gap = gap;
  }
  EXPECT_GT(prev_gap, 0.05 * m.lambda2());
}

TEST(SpectralTable, MomentsAndCovarianceMatchMatern) {
  const double nu = 3.5;
  const auto table = CovarianceModel1D::spectral_table(matern_table(nu));
  const auto ref = CovarianceModel1D::matern_like(nu);
  // Piecewise-linear interpolation on the grid limits agreement to ~1e-4.
  EXPECT_NEAR(table.lambda2(), ref.lambda2(), 1e-4 * ref.lambda2());
  EXPECT_NEAR(table.lambda4().value, ref.lambda4().value, 1e-4 * ref.lambda4().value);
  for (double tau : {1e-3, 0.1, 1.0, 4.0}) {
    const auto a = table.terms(tau), b = ref.terms(tau);
    EXPECT_NEAR(a.A, b.A, 1e-4 * b.A + 1e-14) << tau;
    EXPECT_NEAR(a.B, b.B, 1e-4 * b.B + 1e-14) << tau;
    EXPECT_NEAR(a.D, b.D, 1e-4 * b.D + 1e-12) << tau;
    EXPECT_NEAR(sigma2(table, tau), sigma2(ref, tau), 1e-4 * sigma2(ref, tau) + 1e-14) << tau;
  }
}

TEST(SpectralTable, InfiniteFourthMomentFromTail) {
  const auto table = CovarianceModel1D::spectral_table(matern_table(1.8));
  EXPECT_TRUE(table.lambda4().infinite);
  EXPECT_FALSE(table.spectral_moment(2).infinite);
}

TEST(SpectralTable, FittedTailNearThresholdIsInconclusive) {
  // density ~ lambda^-5 with a wobble: lambda4 is on the edge.
  std::vector<double> f, v;
  for (int i = 0; i < 40; ++i) {
    const double lam = std::pow(10.0, -2.0 + 4.0 * i / 39);
    f.push_back(lam);
    v.push_back(std::pow(1 + lam * lam, -2.5) * (i % 2 == 0 ? 1.6 : 0.6));
  }
  const SpectralDensity d(f, v);
  EXPECT_TRUE(d.tail_fitted());
  EXPECT_THROW(
      {
        try {
          (void)d.moment(4);
        } catch (const Error& e) {
          EXPECT_EQ(e.code(), ErrorCode::InconclusiveTail);
          throw;
        }
      },
      Error);
}

TEST(SpectralTable, NormalizedToUnitVariance) {
  const auto d = matern_table(2.5);
  EXPECT_NE(d.raw_mass(), 1.0);
  const auto m = CovarianceModel1D::spectral_table(d);
  EXPECT_NEAR(1.0 - m.terms(1e-9).A, 1.0, 1e-12);
  EXPECT_NEAR(m.spectrum()->moment(0).value, 1.0, 1e-12);
}

TEST(Sigma2, SineCosineIsZero) {
  const auto m = CovarianceModel1D::sine_cosine(2.0);
  for (double tau : {0.01, 0.5, 1.2, 1.5}) EXPECT_EQ(sigma2(m, tau), 0.0);
}

TEST(Sigma2, SineCosineFullPeriodIsDegenerate) {
  const auto m = CovarianceModel1D::sine_cosine(2.0);
  try {
    (void)sigma2(m, kPi / 2.0);
    FAIL() << "expected DegenerateLag";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateLag);
  }
}

TEST(Sigma2, GaussianExpAtOne) {
  const double expected = 1.0 - std::exp(-1.0) / (1.0 - std::exp(-1.0));
  EXPECT_NEAR(sigma2(CovarianceModel1D::gaussian_exp(), 1.0), expected, 1e-15);
}

TEST(Sigma2, GaussianExpSmallLagSeries) {
  // sigma^2 = 1 - 2x/(e^{2x}-1), x = tau^2/2 = x - x^2/3 + ...
  const auto m = CovarianceModel1D::gaussian_exp();
  for (double tau : {1e-2, 1e-4, 1e-8, 1e-12}) {
    const double x = tau * tau / 2;
    const double series = x - x * x / 3 + x * x * x * x / 45;
    EXPECT_NEAR(sigma2(m, tau) / series, 1.0, 1e-12) << tau;
  }
}

TEST(Sigma2, BoundedByLambda2) {
  for (const auto& m : shipped_models()) {
    for (double tau : {1e-6, 1e-3, 0.1, 0.9, 1.4}) {
      const double s = sigma2(m, tau);
      EXPECT_GE(s, 0.0);
      EXPECT_LE(s, m.lambda2());
    }
  }
}

TEST(Sigma2, MatchesNaiveFormulaWhereStable) {
  for (const auto& m : shipped_models()) {
    if (m.kind() == ModelKind::SineCosine) continue;
    for (double tau : {0.4, 1.0, 2.0}) {
      const auto c = m.eval(tau);
      const double naive = m.lambda2() - c.dr * c.dr / (1 - c.r * c.r);
      EXPECT_NEAR(sigma2(m, tau), naive, 1e-10 * m.lambda2()) << m.name() << " " << tau;
    }
  }
}

TEST(Geman, SineCosineIntegrands) {
  const double w = 2.0;
  const auto g = geman_integrands(CovarianceModel1D::sine_cosine(w), 0.1);
  EXPECT_EQ(g.sigma_form, 0.0);
  EXPECT_NEAR(g.spectral_form, w * w * (1 - std::cos(0.1 * w)) / 0.1, 1e-13);
}

TEST(Geman, GaussianExpIntegrandsVanishLinearly) {
  const auto m = CovarianceModel1D::gaussian_exp();
  for (double tau : {1e-3, 1e-5}) {
    const auto g = geman_integrands(m, tau);
    EXPECT_NEAR(g.sigma_form / tau, 0.5, 1e-5);   // sigma^2 ~ tau^2/2
    EXPECT_NEAR(g.spectral_form / tau, 1.5, 1e-5);  // lambda2 + r'' ~ lambda4 tau^2 / 2
  }
  const auto g = geman_integrands(m, 0.5);
  const double ratio = g.sigma_form / g.spectral_form;
  EXPECT_GT(ratio, 0.1);
  EXPECT_LT(ratio, 10.0);
}

TEST(Invariants, DeterminantAndSmallLagLimit) {
  for (const auto& m : shipped_models()) {
    const double tau = 1e-6;
    const auto t = m.terms(tau);
    const double ratio = t.A * (2 - t.A) / (tau * tau) / m.lambda2();
    if (m.kind() == ModelKind::LogTail) {
      EXPECT_GT(ratio, 0.5) << m.name();  // only logarithmic convergence
      EXPECT_LE(ratio, 1.0) << m.name();
    } else {
      EXPECT_NEAR(ratio, 1.0, 1e-4) << m.name();
    }
    const double r = m.eval(0.7).r;
    EXPECT_LE(std::abs(r), 1.0);
    EXPECT_DOUBLE_EQ(m.eval(-0.7).r, r);
  }
}

TEST(Invariants, GramMatricesArePsd) {
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> U(0.0, 6.0);
  for (const auto& m : shipped_models()) {
    for (int trial = 0; trial < 10; ++trial) {
      const int n = 2 + trial * 3;
      std::vector<double> pts(n);
      for (auto& p : pts) p = U(gen);
      Eigen::MatrixXd G(n, n);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) G(i, j) = m.cov(pts[i] - pts[j]);
      const double mn = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(G).eigenvalues().minCoeff();
      EXPECT_GE(mn, -1e-8) << m.name();
    }
  }
}

TEST(Invariants, MeanOverSigmaBoundedForGaussianExp) {
  // |mu_1| / sigma = |r'| u / ((1 + r) sigma) stays O(u) on (0, 1].
  const auto m = CovarianceModel1D::gaussian_exp();
  double worst = 0.0;
  for (int k = 0; k <= 30; ++k) {
    const double tau = std::ldexp(1.0, -k);
    const auto c = m.eval(tau);
    worst = std::max(worst, std::abs(c.dr) / ((1 + c.r) * std::sqrt(sigma2(m, tau))));
  }
  EXPECT_LT(worst, 1.0);
}

TEST(Errors, InvalidParameters) {
  EXPECT_THROW((void)CovarianceModel1D::gaussian_exp(-1), Error);
  EXPECT_THROW((void)CovarianceModel1D::matern_like(0.9), Error);
  EXPECT_THROW((void)CovarianceModel1D::log_tail(1.0), Error);
  EXPECT_THROW((void)CovarianceModel1D::sine_cosine(0), Error);
}
