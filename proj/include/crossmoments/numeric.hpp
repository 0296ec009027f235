#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>

namespace crossmoments {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// A moment that may legitimately be infinite (spectral moments, second
/// factorial moments of divergent models).
struct MomentValue {
  double value = 0.0;
  bool infinite = false;

  static MomentValue finite(double v) { return {v, false}; }
  static MomentValue unbounded() { return {kInf, true}; }
};

namespace numeric {

// 1 - exp(-x), accurate for small x.
inline double one_minus_exp_neg(double x) { return -std::expm1(-x); }

// (2x+1)(1-e^{-x}) - x = sum_{n>=2} (-1)^n (2n-1) x^n / n!  (>= 0 for x >= 0)
inline double gauss_c_kernel(double x) {
  if (x < 0.5) {
    double term = x;  // x^n / n! at n = 1
    double sum = 0.0;
    for (int n = 2; n < 30; ++n) {
      term *= x / n;
      const double add = ((n % 2 == 0) ? 1.0 : -1.0) * (2.0 * n - 1.0) * term;
      sum += add;
      if (std::abs(add) < 1e-18 * std::abs(sum)) break;
    }
    return sum;
  }
  return (2.0 * x + 1.0) * one_minus_exp_neg(x) - x;
}

// x - sin(x), accurate for small x.
inline double x_minus_sin(double x) {
  if (std::abs(x) < 0.5) {
    const double x2 = x * x;
    double term = x * x2 / 6.0;
    double sum = 0.0;
    for (int k = 1; k < 20; ++k) {
      sum += term;
      term *= -x2 / ((2.0 * k + 2.0) * (2.0 * k + 3.0));
      if (std::abs(term) < 1e-18 * std::abs(sum)) break;
    }
    return sum;
  }
  return x - std::sin(x);
}

// 1 - cos(x) = 2 sin^2(x/2).
inline double one_minus_cos(double x) {
  const double s = std::sin(0.5 * x);
  return 2.0 * s * s;
}

// |e^{ix} - 1 - ix|^2 / 2 = x^2/2 - x sin x + 1 - cos x.
inline double spectral_c_kernel(double x) {
  const double a = x_minus_sin(x);
  const double b = one_minus_cos(x);
  return 0.5 * (a * a + b * b);
}

/// Composite 20-point Gauss-Legendre over [a, b] split into `panels` equal
/// pieces.
template <class F>
double integrate_panels(F&& f, double a, double b, int panels) {
  if (b <= a) return 0.0;
  const double h = (b - a) / panels;
  double total = 0.0;
  for (int p = 0; p < panels; ++p) {
    const double lo = a + p * h;
    total += boost::math::quadrature::gauss<double, 20>::integrate(f, lo, lo + h);
  }
  return total;
}

/// Ordinary least squares y = intercept + slope * x.
struct LinearFit {
  double intercept = 0.0;
  double slope = 0.0;
  double slope_se = 0.0;
  double residual_rms = 0.0;
};

inline LinearFit fit_line(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  LinearFit out;
  if (n < 2) return out;
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  out.slope = sxy / sxx;
  out.intercept = my - out.slope * mx;
  double ssr = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = y[i] - out.intercept - out.slope * x[i];
    ssr += e * e;
  }
  out.residual_rms = std::sqrt(ssr / n);
  out.slope_se = n > 2 ? std::sqrt(ssr / (n - 2) / sxx) : 0.0;
  return out;
}

/// Mean and standard error by batch means. Replicates are split into
/// contiguous batches in index order.
struct BatchStats {
  double mean = 0.0;
  double variance = 0.0;  // sample variance of the individual values
  double se = 0.0;        // batch-means standard error of the mean
  std::size_t batches = 0;
};

inline BatchStats batch_means(std::span<const double> values, std::size_t min_batches = 20) {
  BatchStats out;
  const std::size_t n = values.size();
  if (n == 0) return out;
  double sum = 0.0;
  for (double v : values) sum += v;
  out.mean = sum / n;
  double ss = 0.0;
  for (double v : values) ss += (v - out.mean) * (v - out.mean);
  out.variance = n > 1 ? ss / (n - 1) : 0.0;

  const std::size_t batches = std::min(n, std::max<std::size_t>(min_batches, 20));
  const std::size_t per = n / batches;
  if (per == 0 || batches < 2) {
    out.se = std::sqrt(out.variance / n);
    out.batches = n;
    return out;
  }
  std::vector<double> bm(batches, 0.0);
  for (std::size_t b = 0; b < batches; ++b) {
    const std::size_t lo = b * per;
    const std::size_t hi = (b + 1 == batches) ? n : lo + per;
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) s += values[i];
    bm[b] = s / (hi - lo);
  }
  // Unequal last batch: weight by size when forming the batch-mean variance.
  double bmean = 0.0;
  for (double v : bm) bmean += v;
  bmean /= batches;
  double bss = 0.0;
  for (double v : bm) bss += (v - bmean) * (v - bmean);
  const double var_batch = bss / (batches - 1);
  out.se = std::sqrt(var_batch / batches);
  out.batches = batches;
  return out;
}

}  // namespace numeric
}  // namespace crossmoments
