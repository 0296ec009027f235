#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <sstream>

#include "crossmoments/simulate.hpp"

using namespace crossmoments;

namespace {

GridField plane_grid(int n, double h, const std::function<double(double, double)>& f0,
                     const std::function<double(double, double)>& f1 = nullptr) {
  GridField g;
  g.nx = g.ny = n;
  g.dx = g.dy = h;
  for (const auto* f : {&f0, &f1}) {
    if (!*f) continue;
    std::vector<double> v(static_cast<std::size_t>(n) * n);
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(j) * n + i] = (*f)(i * h, j * h);
    g.layers.push_back(std::move(v));
  }
  return g;
}

double lag_covariance(const ProcessSampler1D& s, int i, int j, int pairs, std::uint64_t seed) {
  RandomStream rng(seed, 0);
  std::vector<double> a, b;
  double acc = 0.0;
  for (int p = 0; p < pairs; ++p) {
    s.sample_pair(rng, a, b);
    acc += a[i] * a[j] + b[i] * b[j];
  }
  return acc / (2.0 * pairs);
}

}  // namespace

TEST(Crossings, SignChangesAndTieRule) {
  const std::vector<double> x{1.0, -1.0, 0.0, 0.5, -0.2, -0.3};
  // 0.0 counts as above the level
  EXPECT_EQ(count_crossings(x, 0.0).count, 3u);
  const std::vector<double> flat{0.0, 0.0, 0.0};
  EXPECT_EQ(count_crossings(flat, 0.0).count, 0u);
}

TEST(Crossings, TangencyScreening) {
  // three samples above u around a dip whose parabola reaches below u
  const std::vector<double> x{1.0, 0.05, 1.0};
  const auto c = count_crossings(x, 0.1);
  EXPECT_EQ(c.count, 2u);
  // parabola through the samples bottoms out near 0.124
  const std::vector<double> y{1.0, 0.15, 0.5};
  EXPECT_EQ(count_crossings(y, 0.13).count, 0u);
  EXPECT_EQ(count_crossings(y, 0.13).tangency_candidates, 1u);
  EXPECT_EQ(count_crossings(y, 0.12).tangency_candidates, 0u);
}

TEST(Crossings, SineHasExactCount) {
  std::vector<double> x(1001);
  for (int i = 0; i < 1001; ++i) x[i] = std::sin(2.0 * kPi * 3.0 * (i + 0.3) / 1000.0);
  EXPECT_EQ(count_crossings(x, 0.0).count, 6u);
}

TEST(Sampler1D, CovarianceMatchesModel) {
  const auto m = CovarianceModel1D::gaussian_exp(1.0);
  for (double drop : {1e-13, -1.0}) {
    EmbeddingOptions opt;
    opt.drop_tol = drop;  // negative keeps every mode, which forces the dense FFT path
    const ProcessSampler1D s(m, 1.0, 256, opt);
    EXPECT_EQ(s.method(), drop < 0 ? SampleMethod::Circulant : SampleMethod::CirculantSparse);
    const int pairs = 20000;
    const double se = std::sqrt(2.0 / (2.0 * pairs));
    EXPECT_NEAR(lag_covariance(s, 10, 10, pairs, 3), 1.0, 4 * se);
    EXPECT_NEAR(lag_covariance(s, 10, 138, pairs, 4), m.cov(0.5), 4 * se);
    EXPECT_NEAR(lag_covariance(s, 0, 256, pairs, 5), m.cov(1.0), 4 * se);
  }
}

TEST(Sampler1D, PaddingEscalatesAndFallback) {
  const auto m = CovarianceModel1D::gaussian_exp(1.0);
  const ProcessSampler1D s(m, 0.5, 1 << 10);
  EXPECT_EQ(s.method(), SampleMethod::CirculantSparse);
  EXPECT_EQ(s.padding(), 16);
  EmbeddingOptions strict;
  strict.spectral_fallback = false;
  try {
    ProcessSampler1D bad(m, 0.25, 1 << 10, strict);
    FAIL() << "expected EmbeddingNotPSD";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmbeddingNotPSD);
    EXPECT_NE(std::string(e.what()).find("min eigenvalue"), std::string::npos);
  }
  EmbeddingOptions loose;
  loose.spectral_terms = 200;
  const ProcessSampler1D fb(m, 0.25, 64, loose);
  EXPECT_EQ(fb.method(), SampleMethod::Spectral);
  EXPECT_NEAR(lag_covariance(fb, 3, 3, 4000, 9), 1.0, 0.1);
}

TEST(Sampler1D, HeavyTailUsesDenseFft) {
  const auto m = CovarianceModel1D::log_tail(1.5);
  const ProcessSampler1D s(m, 2.0, 1 << 10);
  EXPECT_EQ(s.method(), SampleMethod::Circulant);
  EXPECT_NEAR(lag_covariance(s, 7, 7, 4000, 11), 1.0, 4 * std::sqrt(2.0 / 8000.0));
}

TEST(Sampler1D, ReproducibleForFixedSeed) {
  const auto m = CovarianceModel1D::gaussian_exp(0.3);
  const auto a = sample_process_1d(m, 2.0, 513, 42);
  const auto b = sample_process_1d(m, 2.0, 513, 42);
  const auto c = sample_process_1d(m, 2.0, 513, 43);
  EXPECT_EQ(a.layers[0], b.layers[0]);
  EXPECT_NE(a.layers[0], c.layers[0]);
  EXPECT_EQ(a.nx, 513);
}

TEST(Sampler2D, CovarianceMatchesProfile) {
  const auto p = RadialProfile::gaussian_exp(0.25);
  const Rectangle rect{1.0, 1.0};
  const FieldSampler2D s(p, rect, 64);
  EXPECT_EQ(s.points_per_side(), 65);
  RandomStream rng(5, 0);
  std::vector<double> a, b;
  const int pairs = 4000;
  double c00 = 0.0, c01 = 0.0, cd = 0.0;
  const std::size_t o = 10 * 65 + 10, x = 10 * 65 + 26, d = 26 * 65 + 26;
  for (int k = 0; k < pairs; ++k) {
    s.sample_pair(rng, a, b);
    for (const auto* v : {&a, &b}) {
      c00 += (*v)[o] * (*v)[o];
      c01 += (*v)[o] * (*v)[x];
      cd += (*v)[o] * (*v)[d];
    }
  }
  const double se = 4.0 * std::sqrt(2.0 / (2.0 * pairs));
  const auto& r = p.restriction();
  EXPECT_NEAR(c00 / (2 * pairs), 1.0, se);
  EXPECT_NEAR(c01 / (2 * pairs), r.cov(0.25), se);
  EXPECT_NEAR(cd / (2 * pairs), r.cov(0.25 * std::sqrt(2.0)), se);
}

TEST(Roots2D, LinearAndQuadraticFields) {
  // single transversal root at (0.3, 0.6)
  const auto g = plane_grid(
      11, 0.1, [](double x, double) { return x - 0.3; }, [](double x, double y) { return y - 0.6 + 0.2 * x; });
  auto c = count_roots_2d(g, {0.0, 0.0});
  ASSERT_EQ(c.count, 1u);
  EXPECT_NEAR(c.roots[0][0], 0.3, 1e-12);
  EXPECT_NEAR(c.roots[0][1], 0.54, 1e-12);
  // root exactly on a grid node is counted once
  const auto h = plane_grid(
      11, 0.1, [](double x, double) { return x - 0.5; }, [](double, double y) { return y - 0.5; });
  EXPECT_EQ(count_roots_2d(h, {0.0, 0.0}).count, 1u);
  // circle meets a line in two points
  const auto k = plane_grid(
      101, 0.01, [](double x, double y) { return (x - 0.5) * (x - 0.5) + (y - 0.5) * (y - 0.5) - 0.09; },
      [](double x, double) { return x - 0.5; });
  c = count_roots_2d(k, {0.0, 0.0});
  ASSERT_EQ(c.count, 2u);
  EXPECT_EQ(c.newton_stalls, 0u);
}

TEST(ContourLength, CircleAndLine) {
  const auto g = plane_grid(201, 0.005, [](double x, double y) { return std::hypot(x - 0.5, y - 0.5); });
  EXPECT_NEAR(contour_length(g, 0.3), 2.0 * kPi * 0.3, 1e-3);
  const auto h = plane_grid(11, 0.1, [](double x, double y) { return x + y; });
  EXPECT_NEAR(contour_length(h, 1.0), std::sqrt(2.0), 1e-12);
}

TEST(ContourLength, SaddleUsesCenterValue) {
  GridField g;
  g.nx = g.ny = 2;
  g.dx = g.dy = 1.0;
  // corners +1, -1 / -1, +1 with center above u: two cuts around the negative corners
  g.layers.push_back({1.0, -1.0, -1.0, 1.0});
  const double above = contour_length(g, -0.1);
  const double below = contour_length(g, 0.1);
  // u=-0.1 cuts off the negative corners, u=0.1 the positive ones; legs 0.45
  EXPECT_NEAR(above, 2.0 * std::hypot(0.45, 0.45), 1e-12);
  EXPECT_NEAR(below, 2.0 * std::hypot(0.45, 0.45), 1e-12);
}

TEST(Ensemble, SineCosineOnePeriod) {
  EnsembleConfig cfg;
  cfg.model = CovarianceModel1D::sine_cosine(2.0 * kPi);
  cfg.T = 1.0;
  cfg.resolution = 1000;
  cfg.replicates = 200;
  cfg.seed = 3;
  const auto ens = run_ensemble(cfg);
  EXPECT_EQ(ens.method, "exact-rank2");
  EXPECT_DOUBLE_EQ(ens.levels[0].mean, 2.0);
  EXPECT_DOUBLE_EQ(ens.levels[0].variance, 0.0);
}

TEST(Ensemble, RiceMeanAndDeterminism) {
  EnsembleConfig cfg;
  cfg.model = CovarianceModel1D::gaussian_exp(1.0);
  cfg.T = 2.0;
  cfg.u = {0.5, 0.0};
  cfg.resolution = 512;
  cfg.replicates = 4001;
  cfg.seed = 17;
  cfg.levels = 3;
  const auto a = run_ensemble(cfg);
  const double rice = rice_mean_1d(*cfg.model, 0.5, 2.0);
  EXPECT_NEAR(a.levels[0].mean, rice, 4.0 * a.levels[0].se);
  EXPECT_EQ(a.levels.size(), 3u);
  EXPECT_EQ(a.levels[2].intervals, 128);
  EXPECT_LE(a.levels[2].mean, a.levels[0].mean);
  EXPECT_EQ(a.failures, 0u);

  setenv("CROSSMOMENTS_THREADS", "3", 1);
  const auto b = run_ensemble(cfg);
  unsetenv("CROSSMOMENTS_THREADS");
  EXPECT_EQ(a.values, b.values);
  std::ostringstream sa, sb;
  write_ensemble_csv(sa, a);
  write_ensemble_csv(sb, b);
  EXPECT_EQ(sa.str(), sb.str());
  EXPECT_EQ(sa.str().substr(0, 21), "replicate_id,count,de");
}

TEST(Ensemble, RejectsBadConfig) {
  EnsembleConfig cfg;
  cfg.model = CovarianceModel1D::gaussian_exp(1.0);
  cfg.replicates = 0;
  try {
    run_ensemble(cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidConfig);
  }
  cfg.replicates = 10;
  cfg.resolution = 1001;
  EXPECT_THROW(run_ensemble(cfg), Error);
  cfg.resolution = 64;
  cfg.kind = EnsembleKind::Roots2D;
  cfg.field = IsotropicFieldModel::uniform(1, RadialProfile::gaussian_exp(0.25));
  EXPECT_THROW(run_ensemble(cfg), Error);
}

TEST(Ensemble, RootsAndLengthMeans) {
  const auto p = RadialProfile::gaussian_exp(0.25);
  EnsembleConfig cfg;
  cfg.kind = EnsembleKind::Roots2D;
  cfg.field = IsotropicFieldModel::uniform(2, p);
  cfg.rect = {1.0, 1.0};
  cfg.resolution = 128;
  cfg.replicates = 400;
  cfg.seed = 8;
  const auto r = run_ensemble(cfg);
  const double er = first_moment_2d(*cfg.field, {0.0, 0.0}, cfg.rect);
  EXPECT_NEAR(r.levels[0].mean, er, 4.0 * r.levels[0].se);

  cfg.kind = EnsembleKind::Length2D;
  cfg.field = IsotropicFieldModel::uniform(1, p);
  const auto l = run_ensemble(cfg);
  const double el = length_first_moment(p, 0.0, cfg.rect);
  EXPECT_NEAR(l.levels[0].mean, el, 4.0 * l.levels[0].se + 0.01 * el);
}
