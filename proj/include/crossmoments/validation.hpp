#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_bin_float.hpp>

#include "crossmoments/covmodels.hpp"
#include "crossmoments/fields.hpp"
#include "crossmoments/gausscond.hpp"
#include "crossmoments/kacrice.hpp"
#include "crossmoments/logtail_oracle.hpp"
#include "crossmoments/mp_eigen.hpp"
#include "crossmoments/numeric.hpp"
#include "crossmoments/parallel.hpp"
#include "crossmoments/rng.hpp"
#include "crossmoments/simulate.hpp"

namespace crossmoments::validation {

struct ValidationOptions {
  /// Smaller ensembles for the 2D Monte Carlo checks.
  bool reduced = false;
  /// Multiplies every tolerance; 0 forces failures (test hook).
  double tolerance_scale = 1.0;
  std::uint64_t seed = 20240611;
};

struct CheckResult {
  int criterion = 0;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

namespace detail {

using Big = boost::multiprecision::number<boost::multiprecision::cpp_bin_float<50>, boost::multiprecision::et_off>;

class Tally {
 public:
  explicit Tally(double scale) : scale_(scale) {}
  // |a - b| <= tol * scale; keeps the worst ratio for the report
  bool within(double a, double b, double tol) {
    const double d = std::abs(a - b);
    worst_ = std::max(worst_, tol > 0.0 ? d / tol : (d > 0.0 ? kInf : 0.0));
    const bool ok = d <= tol * scale_;
    if (!ok) ++failures_;
    return ok;
  }
  bool expect(bool ok) {
    if (!ok) ++failures_;
    return ok;
  }
  [[nodiscard]] int failures() const { return failures_; }
  [[nodiscard]] double worst() const { return worst_; }
  [[nodiscard]] double scale() const { return scale_; }

 private:
  double scale_;
  int failures_ = 0;
  double worst_ = 0.0;
};

inline std::string fmt(double x) {
  std::ostringstream os;
  os.precision(6);
  os << x;
  return os.str();
}

inline double elapsed(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

}  // namespace detail

/// Criterion 1: closed-form regression against generic Schur conditioning
/// (50-digit arithmetic on the same r, r', r'') at random (model, tau, u).
inline CheckResult check_regression(const ValidationOptions& opt) {
  using detail::Big;
  const auto t0 = std::chrono::steady_clock::now();
  detail::Tally t(opt.tolerance_scale);
  RandomStream rng(opt.seed, 1);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const double a = rng.uniform(), b = rng.uniform();
    const double l = 0.5 + 1.5 * rng.uniform();
    const CovarianceModel1D m = trial % 4 == 0   ? CovarianceModel1D::gaussian_exp(l)
                                : trial % 4 == 1 ? CovarianceModel1D::matern_like(2.2 + 3.0 * a, l)
                                : trial % 4 == 2 ? CovarianceModel1D::cauchy(0.5 + 3.0 * a, l)
                                                 : CovarianceModel1D::log_tail(1.2 + 2.0 * a, l);
    const double tau = l * std::exp(std::log(0.1) + b * std::log(30.0));
    const double u = 4.0 * rng.uniform() - 2.0;
    const auto q = regression_1d(m, tau, u);
    const auto e = m.eval(tau);
    const Mat<Big> c = pair_joint_cov_1d<Big>(Big(m.lambda2()), Big(e.r), Big(e.dr), Big(e.d2r));
    Vec<Big> vals(2);
    vals << Big(u), Big(u);
    const auto g = condition<Big>(Vec<Big>::Zero(4), c, {0, 1}, vals);
    const double mu1 = static_cast<double>(g.mean(1)), mu2 = static_cast<double>(g.mean(0));
    const double s0 = static_cast<double>(g.cov(0, 0)), s1 = static_cast<double>(g.cov(1, 1));
    const double det = static_cast<double>(c(0, 0) * c(1, 1) - c(0, 1) * c(1, 0));
    for (auto [x, y] : {std::pair{q.mu1, mu1}, std::pair{q.mu2, mu2}, std::pair{q.sigma2, s0},
                        std::pair{q.sigma2, s1}, std::pair{q.det, det}}) {
      if (y == 0.0 && x == 0.0) continue;
      const double r = detail::rel_err(x, y);
      worst = std::max(worst, r);
      t.expect(r <= 1e-10 * opt.tolerance_scale);
    }
    t.expect(q.mu2 == -q.mu1);
  }
  const double secs = detail::elapsed(t0);
  t.expect(secs < 5.0);
  return {1, "regression", t.failures() == 0,
          "100 triples, max relative error " + detail::fmt(worst) + " (tol 1e-10), " + detail::fmt(secs) + " s",
          secs};
}

/// Criterion 2: the conditional gradient-pair covariance in closed form
/// against generic conditioning, including its zero pattern.
inline CheckResult check_lcov(const ValidationOptions& opt) {
  using detail::Big;
  const auto t0 = std::chrono::steady_clock::now();
  detail::Tally t(opt.tolerance_scale);
  RandomStream rng(opt.seed, 2);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int d = 1 + trial % 3;
    const double r = std::exp(std::log(0.02) + rng.uniform() * std::log(100.0));
    const double u = 3.0 * rng.uniform() - 1.5;
    const double a = rng.uniform(), l = 0.5 + rng.uniform();
    const RadialProfile p = trial % 3 == 0   ? RadialProfile::gaussian_exp(l)
                            : trial % 3 == 1 ? RadialProfile::cauchy(0.5 + 3.0 * a, l)
                                             : RadialProfile::matern(2.2 + 3.0 * a, l);
    const LCov L = lcov_closed_form(p, d, r, u);
    Eigen::VectorXd gm(2 * d);
    Eigen::MatrixXd gc(2 * d, 2 * d);
    if (p.closed_form()) {
      const auto rd = p.derivs<Big>(Big(r) * Big(r), 2);
      const auto r0 = p.derivs<Big>(Big(0), 1);
      const Mat<Big> c = isotropic_pair_joint_cov<Big>(d, Big(r), rd[0], rd[1], rd[2], r0[1]);
      Vec<Big> vals(2);
      vals << Big(u), Big(u);
      const auto g = condition<Big>(Vec<Big>::Zero(c.rows()), c, {0, 1}, vals);
      for (int i = 0; i < 2 * d; ++i) {
        gm(i) = static_cast<double>(g.mean(i));
        for (int j = 0; j < 2 * d; ++j) gc(i, j) = static_cast<double>(g.cov(i, j));
      }
    } else {
      const auto rd = p.derivs<double>(r * r, 2);
      const auto r0 = p.derivs<double>(0.0, 1);
      const Mat<double> c = isotropic_pair_joint_cov<double>(d, r, rd[0], rd[1], rd[2], r0[1]);
      Vec<double> vals(2);
      vals << u, u;
      const auto g = condition<double>(Vec<double>::Zero(c.rows()), c, {0, 1}, vals);
      gm = g.mean;
      gc = g.cov;
    }
    const double scale = p.gradient_variance();
    for (int i = 0; i < 2 * d; ++i) {
      worst = std::max(worst, std::abs(L.mean(i) - gm(i)) / std::sqrt(scale));
      t.within(L.mean(i), gm(i), 1e-10 * std::sqrt(scale));
      for (int j = 0; j < 2 * d; ++j) {
        worst = std::max(worst, std::abs(L.cov(i, j) - gc(i, j)) / scale);
        t.within(L.cov(i, j), gc(i, j), 1e-10 * scale);
        // zero pattern: only (i, i), (i, d + i) and their mirrors are nonzero
        const bool structural = i == j || std::abs(i - j) == d;
        if (!structural) t.expect(L.cov(i, j) == 0.0 && std::abs(gc(i, j)) <= 1e-12 * scale);
      }
    }
    // the single longitudinal coupling sits at (0, d)
    t.expect(L.cov(0, d) != 0.0 || r > 5.0);
    for (int j = 1; j < d; ++j) t.expect(L.mean(j) == 0.0 && L.mean(d + j) == 0.0);
  }
  const double secs = detail::elapsed(t0);
  t.expect(secs < 10.0);
  return {2, "lcov", t.failures() == 0,
          "100 (profile, r) pairs, max scaled error " + detail::fmt(worst) + " (tol 1e-10), zero pattern exact, " +
              detail::fmt(secs) + " s",
          secs};
}

/// Criterion 3: Hermite orthogonality against Monte Carlo and the stated
/// lower bound 1 + 2 rho^2 on Var(Y1 Y2) over a (m1, m2, rho) grid.
inline CheckResult check_mehler(const ValidationOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  detail::Tally t(opt.tolerance_scale);
  const std::size_t n = 1'000'000;
  const double rhos[] = {0.0, 0.3, -0.3, 0.9, -0.9};
  double worst_z = 0.0;
  for (int ir = 0; ir < 5; ++ir) {
    const double rho = rhos[ir];
    RandomStream rng(opt.seed, 30 + static_cast<std::uint64_t>(ir));
    double acc[5][5] = {}, acc2[5][5] = {};
    const double s = std::sqrt(1.0 - rho * rho);
    for (std::size_t k = 0; k < n; ++k) {
      const double z1 = rng.normal(), z2 = rng.normal();
      const double y1 = z1, y2 = rho * z1 + s * z2;
      double h1[5], h2[5];
      for (int i = 0; i < 5; ++i) {
        h1[i] = hermite_he(i, y1);
        h2[i] = hermite_he(i, y2);
      }
      for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) {
          const double v = h1[i] * h2[j];
          acc[i][j] += v;
          acc2[i][j] += v * v;
        }
    }
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j) {
        const double m = acc[i][j] / n;
        const double se = std::sqrt(std::max(0.0, acc2[i][j] / n - m * m) / n);
        const double ref = mehler_covariance(i, j, rho);
        if (se > 0.0) worst_z = std::max(worst_z, std::abs(m - ref) / se);
        t.within(m, ref, 3.0 * se + 1e-12);
      }
  }
  const int hermite_misses = t.failures();
  // variance bound on a 5 x 5 x 5 grid
  const double ms[] = {-2.0, -1.0, 0.0, 1.0, 2.0};
  const double gr[] = {-0.9, -0.45, 0.0, 0.45, 0.9};
  const std::size_t nv = 100'000;
  int violations = 0, weak_violations = 0;
  std::string first;
  for (int a = 0; a < 5; ++a)
    for (int b = 0; b < 5; ++b)
      for (int c = 0; c < 5; ++c) {
        RandomStream rng(opt.seed, 100 + static_cast<std::uint64_t>(25 * a + 5 * b + c));
        const double m1 = ms[a], m2 = ms[b], rho = gr[c], s = std::sqrt(1.0 - rho * rho);
        double s1 = 0, s2 = 0, s3 = 0, s4 = 0;
        for (std::size_t k = 0; k < nv; ++k) {
          const double z1 = rng.normal(), z2 = rng.normal();
          const double v = (m1 + z1) * (m2 + rho * z1 + s * z2);
          s1 += v;
          s2 += v * v;
          s3 += v * v * v;
          s4 += v * v * v * v;
        }
        const double mu = s1 / nv;
        const double var = s2 / nv - mu * mu;
        const double m4 = s4 / nv - 4 * mu * s3 / nv + 6 * mu * mu * s2 / nv - 3 * mu * mu * mu * mu;
        const double se = std::sqrt(std::max(0.0, m4 - var * var) / nv);
        const double bound = product_variance_lower(rho);
        if (!(var >= bound - 3.0 * se * opt.tolerance_scale)) {
          ++violations;
          if (first.empty())
            first = "Var=" + detail::fmt(var) + " < " + detail::fmt(bound) + " at (m1,m2,rho)=(" + detail::fmt(m1) +
                    "," + detail::fmt(m2) + "," + detail::fmt(rho) + ")";
        }
        if (!(var >= 1.0 + rho * rho - 3.0 * se)) ++weak_violations;
      }
  t.expect(violations == 0);
  const double secs = detail::elapsed(t0);
  std::string detail = "Hermite max |z| " + detail::fmt(worst_z) + ", beyond 3 SE at " +
                       std::to_string(hermite_misses) + "/125; Var >= 1+2rho^2-3SE violated at " +
                       std::to_string(violations) + "/125 grid points";
  if (!first.empty()) detail += " (first: " + first + ")";
  detail += "; Var >= 1+rho^2-3SE violated at " + std::to_string(weak_violations) + "/125";
  return {3, "mehler", t.failures() == 0, detail, secs};
}

/// Criterion 4: E|Y1 Y2| against the centered closed form, and two-sided
/// bounds over |m_i| <= 3.
inline CheckResult check_abs_moment(const ValidationOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  detail::Tally t(opt.tolerance_scale);
  double worst = 0.0;
  for (int k = 0; k < 50; ++k) {
    const double rho = -0.99 + 1.98 * k / 49.0;
    const double ref = 2.0 / kPi * (std::sqrt(1.0 - rho * rho) + rho * std::asin(rho));
    const double v = abs_moment(0.0, 0.0, rho);
    worst = std::max(worst, std::abs(v - ref));
    t.within(v, ref, 1e-8);
  }
  // frozen bounds c = 0.5, C = 20 over the box |m_i| <= 3, |rho| <= 1
  double lo = kInf, hi = 0.0;
  for (int a = 0; a <= 12; ++a)
    for (int b = 0; b <= 12; ++b)
      for (int c = 0; c <= 10; ++c) {
        const double v = abs_moment(-3.0 + 0.5 * a, -3.0 + 0.5 * b, -1.0 + 0.2 * c);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
  t.expect(lo >= 0.5 && hi <= 20.0);
  const double secs = detail::elapsed(t0);
  return {4, "abs_moment", t.failures() == 0,
          "50 rho values, max error " + detail::fmt(worst) + " (tol 1e-8); over |m_i|<=3 range [" + detail::fmt(lo) +
              ", " + detail::fmt(hi) + "] within [0.5, 20]",
          secs};
}

/// Criterion 5: 1D Kac-Rice second factorial moment and Rice mean against
/// crossing-count Monte Carlo on a 2^14 grid.
inline CheckResult check_moments_1d(const ValidationOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  detail::Tally t(opt.tolerance_scale);
  const std::size_t R = 100'000;
  const int n = 1 << 14;
  const auto model = CovarianceModel1D::gaussian_exp(1.0);
  const double levels[] = {0.0, 1.0};
  std::string detail;
  double worst_z = 0.0;
  for (double T : {0.5, 1.0, 2.0}) {
    const ProcessSampler1D s(model, T, n);
    std::vector<std::array<double, 2>> counts(R);
    const std::size_t pairs = (R + 1) / 2;
    const std::uint64_t seed = derive_seed(opt.seed, 0x15 + static_cast<std::uint64_t>(4 * T));
    parallel_for(pairs, [&](std::size_t p) {
      RandomStream rng(seed, p);
      std::vector<double> a, b;
      s.sample_pair(rng, a, b);
      for (int l = 0; l < 2; ++l) {
        counts[2 * p][l] = static_cast<double>(count_crossings(a, levels[l]).count);
        if (2 * p + 1 < R) counts[2 * p + 1][l] = static_cast<double>(count_crossings(b, levels[l]).count);
      }
    });
    for (int l = 0; l < 2; ++l) {
      std::vector<double> c(R), f(R);
      for (std::size_t r = 0; r < R; ++r) {
        c[r] = counts[r][l];
        f[r] = c[r] * (c[r] - 1.0);
      }
      const auto bm = numeric::batch_means(c, 20), bf = numeric::batch_means(f, 20);
      const double rice = rice_mean_1d(model, levels[l], T);
      const MomentReport kr = second_factorial_moment_1d(model, levels[l], T);
      const double se = std::hypot(bf.se, kr.quad_error);
      worst_z = std::max({worst_z, std::abs(bm.mean - rice) / bm.se, std::abs(bf.mean - kr.second_factorial.value) / se});
      t.within(bm.mean, rice, 3.0 * bm.se);
      t.within(bf.mean, kr.second_factorial.value, 3.0 * se);
      detail += " T=" + detail::fmt(T) + ",u=" + detail::fmt(levels[l]) + ": KR " +
                detail::fmt(kr.second_factorial.value) + " MC " + detail::fmt(bf.mean) + "+-" + detail::fmt(bf.se) +
                ";";
    }
  }
  const double secs = detail::elapsed(t0);
  t.expect(secs < 300.0);
  return {5, "moments1d", t.failures() == 0,
          "max |z| " + detail::fmt(worst_z) + " (3 SE), " + detail::fmt(secs) + " s;" + detail, secs};
}

/// Criterion 6: Geman classifier on GaussianExp, SineCosine and LogTail(1.5),
/// with LogTail divergence certified by the 50-digit oracle.
inline CheckResult check_geman(const ValidationOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  detail::Tally t(opt.tolerance_scale);
  const auto g = geman_classify(CovarianceModel1D::gaussian_exp());
  const auto sc = geman_classify(CovarianceModel1D::sine_cosine(1.0));
  const auto lt_model = CovarianceModel1D::log_tail(1.5);
  const auto lt = geman_classify(lt_model);
  t.expect(g.cls == GemanClass::Converges);
  t.within(g.alpha, 2.0, 0.1);
  t.expect(sc.cls == GemanClass::Converges);
  t.expect(lt.cls == GemanClass::Diverges);
  for (const auto* r : {&g, &sc, &lt}) t.expect(r->sigma_form.cls == r->spectral_form.cls);

  const oracle::LogTailOracle ref(1.5);
  std::vector<double> tau, exact;
  double worst = 0.0;
  for (int k = 10; k <= 40; k += 6) {
    const double x = std::ldexp(1.0, -k);
    const double s = static_cast<double>(ref.sigma2(oracle::Real(x)));
    worst = std::max(worst, detail::rel_err(sigma2(lt_model, x), s));
    t.within(sigma2(lt_model, x), s, 1e-6 * s);
    tau.push_back(x);
    exact.push_back(s);
  }
  const GemanFit cert = classify_sequence(tau, exact, lt_model.lambda2());
  t.expect(cert.cls == GemanClass::Diverges);
  const double secs = detail::elapsed(t0);
  t.expect(secs < 60.0);
  return {6, "geman", t.failures() == 0,
          "GaussianExp " + std::string(to_string(g.cls)) + " alpha=" + detail::fmt(g.alpha) + "; SineCosine " +
              std::string(to_string(sc.cls)) + "; LogTail(1.5) " + std::string(to_string(lt.cls)) +
              ", oracle " + std::string(to_string(cert.cls)) + " (log-log slope " + detail::fmt(cert.loglog_slope) +
              ", max rel dev " + detail::fmt(worst) + "); forms agree; " + detail::fmt(secs) + " s",
          secs};
}

/// The isotropic test field of criteria 7 and 8: GaussianExp profile with
/// length scale 0.25 on the unit square.
inline RadialProfile field_profile() { return RadialProfile::gaussian_exp(0.25); }

/// Criterion 7: roots of a 2D isotropic field, Monte Carlo against the Kac-Rice
/// first and second factorial moments, and A(r, u) <= C sigma2_max(r).
inline CheckResult check_roots_2d(const ValidationOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  detail::Tally t(opt.tolerance_scale);
  const auto field = IsotropicFieldModel::uniform(2, field_profile());
  const Rectangle rect{1.0, 1.0};
  const std::size_t R = opt.reduced ? 300 : 1000;
  const int n = opt.reduced ? 256 : 512;
  const std::array<std::array<double, 2>, 2> levels{{{0.0, 0.0}, {1.0, 1.0}}};

  const FieldSampler2D s(field.coords[0], rect, n);
  std::vector<std::array<double, 2>> counts(R);
  std::size_t stalls = 0;
  std::vector<std::size_t> stall(R, 0);
  const std::size_t pairs = (R + 1) / 2;
  const std::uint64_t seed = derive_seed(opt.seed, 0x77);
  parallel_for(pairs, [&](std::size_t p) {
    RandomStream rng(seed, p);
    std::vector<double> a1, b1, a2, b2;
    s.sample_pair(rng, a1, b1);
    s.sample_pair(rng, a2, b2);
    for (int rep = 0; rep < 2; ++rep) {
      const std::size_t r = 2 * p + rep;
      if (r >= R) break;
      GridField g;
      g.nx = g.ny = s.points_per_side();
      g.dx = s.dx();
      g.dy = s.dy();
      g.layers = rep == 0 ? std::vector<std::vector<double>>{a1, a2} : std::vector<std::vector<double>>{b1, b2};
      for (int l = 0; l < 2; ++l) {
        const auto c = count_roots_2d(g, levels[l]);
        counts[r][l] = static_cast<double>(c.count);
        stall[r] += c.newton_stalls;
      }
    }
  });
  for (auto v : stall) stalls += v;
  std::string detail;
  double worst_z = 0.0;
  const double C = 4.0 * field_profile().gradient_variance();
  int bound_violations = 0;
  for (int l = 0; l < 2; ++l) {
    std::vector<double> c(R), f(R);
    for (std::size_t r = 0; r < R; ++r) {
      c[r] = counts[r][l];
      f[r] = c[r] * (c[r] - 1.0);
    }
    const auto bm = numeric::batch_means(c, 20), bf = numeric::batch_means(f, 20);
    const double mean = first_moment_2d(field, levels[l], rect);
    const MomentReport kr = second_moment_2d_zero(field, levels[l], rect);
    const double se = std::sqrt(bf.se * bf.se + kr.inner_mc_se * kr.inner_mc_se + kr.quad_error * kr.quad_error);
    worst_z = std::max({worst_z, std::abs(bm.mean - mean) / bm.se, std::abs(bf.mean - kr.second_factorial.value) / se});
    t.within(bm.mean, mean, 3.0 * bm.se);
    t.within(bf.mean, kr.second_factorial.value, 3.0 * se);
    for (int k = 2; k <= 14; ++k) {
      const double r = std::ldexp(1.0, -k);
      RandomStream rng(derive_seed(opt.seed, 0xa7), static_cast<std::uint64_t>(16 * l + k));
      const InnerMC a = jacobian_product_moment(field, r, levels[l], rng);
      if (!(a.mean <= C * sigma2_max(field, r) * opt.tolerance_scale + 3.0 * a.se)) ++bound_violations;
    }
    detail += " u=" + detail::fmt(levels[l][0]) + ": mean KR " + detail::fmt(mean) + " MC " + detail::fmt(bm.mean) +
              "; E[N(N-1)] KR " + detail::fmt(kr.second_factorial.value) + " MC " + detail::fmt(bf.mean) + "+-" +
              detail::fmt(bf.se) + ";";
  }
  t.expect(bound_violations == 0);
  const double secs = detail::elapsed(t0);
  if (!opt.reduced) t.expect(secs < 1200.0);
  return {7, "roots2d", t.failures() == 0,
          std::to_string(R) + " replicates on " + std::to_string(n) + "^2, max |z| " + detail::fmt(worst_z) +
              ", A <= 4 lambda sigma2_max violations " + std::to_string(bound_violations) + ", Newton stalls " +
              std::to_string(stalls) + ", " + detail::fmt(secs) + " s;" + detail,
          secs};
}

/// Criterion 8: second moment of the level-curve length, Monte Carlo at three
/// nested resolutions against the Kac-Rice value.
inline CheckResult check_length(const ValidationOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  detail::Tally t(opt.tolerance_scale);
  const auto p = field_profile();
  const Rectangle rect{1.0, 1.0};
  const std::size_t R = opt.reduced ? 1000 : 4000;
  const int n = opt.reduced ? 256 : 512;
  std::string detail;
  double worst_z = 0.0, worst_spread = 0.0;
  for (double u : {0.0, 1.0}) {
    EnsembleConfig cfg;
    cfg.kind = EnsembleKind::Length2D;
    cfg.field = IsotropicFieldModel::uniform(1, p);
    cfg.rect = rect;
    cfg.u = {u, 0.0};
    cfg.resolution = n;
    cfg.replicates = R;
    cfg.levels = 3;
    cfg.seed = derive_seed(opt.seed, 0x88);
    const auto ens = run_ensemble(cfg);
    const MomentReport kr = length_second_moment_2d_to_1d(p, u, rect);
    double lo = kInf, hi = 0.0;
    for (const auto& l : ens.levels) {
      lo = std::min(lo, l.second);
      hi = std::max(hi, l.second);
      t.expect(std::isfinite(l.second));
    }
    const double spread = (hi - lo) / hi;
    worst_spread = std::max(worst_spread, spread);
    t.expect(spread < 0.05 * opt.tolerance_scale);
    const auto& fine = ens.levels[0];
    const double se = std::sqrt(fine.second_se * fine.second_se + kr.inner_mc_se * kr.inner_mc_se +
                                kr.quad_error * kr.quad_error);
    worst_z = std::max(worst_z, std::abs(fine.second - kr.second_moment.value) / se);
    t.within(fine.second, kr.second_moment.value, 3.0 * se);
    detail += " u=" + detail::fmt(u) + ": E[L^2] KR " + detail::fmt(kr.second_moment.value) + " MC " +
              detail::fmt(fine.second) + "+-" + detail::fmt(fine.second_se) + " (levels " +
              detail::fmt(ens.levels[2].second) + ", " + detail::fmt(ens.levels[1].second) + ", " +
              detail::fmt(fine.second) + ");";
  }
  const double secs = detail::elapsed(t0);
  if (!opt.reduced) t.expect(secs < 900.0);
  return {8, "length", t.failures() == 0,
          std::to_string(R) + " replicates on " + std::to_string(n) + "^2, max |z| " + detail::fmt(worst_z) +
              ", max relative spread over 3 resolutions " + detail::fmt(worst_spread) + ", " + detail::fmt(secs) +
              " s;" + detail,
          secs};
}

/// Criterion 9: E[N(N-1)] across three grid doublings on the same paths:
/// strictly increasing without stabilizing for the divergent model, stable
/// within 3 SE for the convergent ones.
inline CheckResult check_divergence(const ValidationOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  detail::Tally t(opt.tolerance_scale);
  const double l = 0.02;
  struct Case {
    CovarianceModel1D model;
    bool divergent;
  };
  const std::vector<Case> cases{{CovarianceModel1D::log_tail(1.5, l), true},
                                {CovarianceModel1D::gaussian_exp(l), false},
                                {CovarianceModel1D::matern_like(2.5, l), false},
                                {CovarianceModel1D::cauchy(1.5, l), false},
                                {CovarianceModel1D::log_tail(3.0, l), false}};
  std::string detail;
  for (const auto& c : cases) {
    EnsembleConfig cfg;
    cfg.model = c.model;
    cfg.T = 1.0;
    cfg.resolution = 1 << 15;
    cfg.replicates = opt.reduced ? 2000 : 4000;
    cfg.levels = 4;
    cfg.seed = derive_seed(opt.seed, 0x99);
    const auto ens = run_ensemble(cfg);
    // levels run finest first
    std::vector<double> m;
    for (int k = 3; k >= 0; --k) m.push_back(ens.levels[static_cast<std::size_t>(k)].second);
    const auto& fine = ens.levels[0];
    const auto& prev = ens.levels[1];
    const auto& coarse = ens.levels[3];
    const double step_se = std::hypot(fine.second_se, prev.second_se);
    const double total_se = std::hypot(fine.second_se, coarse.second_se);
    bool ok;
    if (c.divergent) {
      int significant = 0;
      bool increasing = true;
      for (int k = 0; k < 3; ++k) {
        const auto& a = ens.values[static_cast<std::size_t>(3 - k)];
        const auto& b = ens.values[static_cast<std::size_t>(2 - k)];
        std::vector<double> d(a.size());
        for (std::size_t r = 0; r < a.size(); ++r) d[r] = b[r] * (b[r] - 1.0) - a[r] * (a[r] - 1.0);
        const auto bd = numeric::batch_means(d, 20);
        if (!(bd.mean > 0.0)) increasing = false;
        if (bd.mean > 3.0 * bd.se * opt.tolerance_scale) ++significant;
      }
      ok = increasing && significant == 3 && fine.second - coarse.second > 3.0 * total_se;
    } else {
      ok = std::abs(fine.second - prev.second) <= 3.0 * step_se * opt.tolerance_scale;
    }
    t.expect(ok);
    detail += std::string(" ") + c.model.name() + (c.divergent ? "[div]" : "") + ": ";
    for (std::size_t k = 0; k < m.size(); ++k) detail += (k ? " -> " : "") + detail::fmt(m[k]);
    detail += ok ? " ok;" : " FAIL;";
  }
  const double secs = detail::elapsed(t0);
  return {9, "divergence", t.failures() == 0, "n=4096..32768, T=1, l=0.02; " + detail::fmt(secs) + " s;" + detail,
          secs};
}

struct Check {
  int criterion;
  const char* name;
  CheckResult (*run)(const ValidationOptions&);
  /// Part of the default `validate` run.
  bool in_validate;
};

inline const std::vector<Check>& all_checks() {
  static const std::vector<Check> checks{
      {1, "regression", check_regression, true},   {2, "lcov", check_lcov, true},
      {3, "mehler", check_mehler, true},           {4, "abs_moment", check_abs_moment, true},
      {5, "moments1d", check_moments_1d, true},    {6, "geman", check_geman, true},
      {7, "roots2d", check_roots_2d, true},        {8, "length", check_length, true},
      {9, "divergence", check_divergence, false},
  };
  return checks;
}

/// Runs the checks matching `filter` (empty: the default validate set) in
/// criterion order; on_result sees each result as soon as it is ready.
inline std::vector<CheckResult> run_checks(const ValidationOptions& opt, const std::string& filter,
                                           const std::function<void(const CheckResult&)>& on_result = {}) {
  std::vector<CheckResult> out;
  for (const auto& c : all_checks()) {
    const bool selected = filter.empty() ? c.in_validate : filter == c.name || filter == std::to_string(c.criterion);
    if (!selected) continue;
    CheckResult r;
    try {
      r = c.run(opt);
    } catch (const std::exception& e) {
      r = {c.criterion, c.name, false, std::string("error: ") + e.what(), 0.0};
    }
    if (on_result) on_result(r);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace crossmoments::validation
