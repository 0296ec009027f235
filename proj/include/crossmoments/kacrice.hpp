#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/multiprecision/float128.hpp>

#include "crossmoments/covmodels.hpp"
#include "crossmoments/error.hpp"
#include "crossmoments/fields.hpp"
#include "crossmoments/gausscond.hpp"
#include "crossmoments/numeric.hpp"
#include "crossmoments/parallel.hpp"
#include "crossmoments/rng.hpp"

namespace crossmoments {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// ---------------------------------------------------------------------------
// Convergence classifier
// ---------------------------------------------------------------------------

enum class GemanClass { Converges, Diverges, Inconclusive };

constexpr std::string_view to_string(GemanClass c) {
  switch (c) {
    case GemanClass::Converges: return "Converges";
    case GemanClass::Diverges: return "Diverges";
    case GemanClass::Inconclusive: return "Inconclusive";
  }
  return "Inconclusive";
}

struct GemanOptions {
  int k_min = 4;
  int k_max = 40;
  double alpha_tol = 0.25;
  double se_max = 0.1;
  /// Values at or below zero_tol * scale count as exactly zero.
  double zero_tol = 1e-13;
  /// Slope gamma of log v against log|log tau|: v ~ |log tau|^gamma gives a
  /// convergent integral of v / tau iff gamma < -1.
  double loglog_converges = -1.25;
  double loglog_diverges = -0.75;
};

/// Classification of one sequence v(tau_k) for the integral of v(tau) / tau at 0.
struct GemanFit {
  GemanClass cls = GemanClass::Inconclusive;
  double alpha = kNaN;
  double alpha_se = kNaN;
  double loglog_slope = kNaN;
  bool identically_zero = false;
};

/// Classifies the behavior of v at 0 from samples at decreasing lags tau
/// (tau[k] > tau[k+1]). The fit uses the finest half of the samples.
inline GemanFit classify_sequence(std::span<const double> tau, std::span<const double> v, double scale,
                                  const GemanOptions& opt = {}) {
  GemanFit out;
  const std::size_t n = std::min(tau.size(), v.size());
  if (n < 4) return out;
  bool all_zero = true;
  for (std::size_t k = 0; k < n; ++k)
    if (v[k] > opt.zero_tol * scale) all_zero = false;
  if (all_zero) {
    out.cls = GemanClass::Converges;
    out.identically_zero = true;
    return out;
  }
  std::vector<double> lx, ly, lll;
  for (std::size_t k = n / 2; k < n; ++k) {
    if (!(v[k] > 0.0) || !(tau[k] > 0.0) || !(tau[k] < 1.0)) continue;
    lx.push_back(std::log(tau[k]));
    ly.push_back(std::log(v[k]));
    lll.push_back(std::log(-std::log(tau[k])));
  }
  if (lx.size() < 3) {
    // the finest lags underflow to zero: the sequence vanishes
    out.cls = GemanClass::Converges;
    return out;
  }
  const numeric::LinearFit fit = numeric::fit_line(lx, ly);
  out.alpha = fit.slope;
  out.alpha_se = fit.slope_se;
  if (fit.slope >= opt.alpha_tol && fit.slope_se < opt.se_max) {
    out.cls = GemanClass::Converges;
    return out;
  }
  if (fit.slope <= -opt.alpha_tol) {
    out.cls = GemanClass::Diverges;
    return out;
  }
  const numeric::LinearFit ll = numeric::fit_line(lll, ly);
  out.loglog_slope = ll.slope;
  if (ll.slope <= opt.loglog_converges)
    out.cls = GemanClass::Converges;
  else if (ll.slope >= opt.loglog_diverges)
    out.cls = GemanClass::Diverges;
  return out;
}

struct GemanReport {
  GemanClass cls = GemanClass::Inconclusive;
  double alpha = kNaN;
  double alpha_se = kNaN;
  GemanFit sigma_form;
  GemanFit spectral_form;
  std::vector<double> tau;
  std::vector<double> sigma2;    // sigma^2(tau_k)
  std::vector<double> spectral;  // lambda2 + r''(tau_k)
};

/// Classifies the integral of sigma^2(tau) / tau at 0 on tau_k = 2^-k, and
/// independently the integral of (lambda2 + r''(tau)) / tau; the two must agree.
inline GemanReport geman_classify(const CovarianceModel1D& model, const GemanOptions& opt = {}) {
  require(opt.k_min >= 1 && opt.k_max >= opt.k_min + 5, ErrorCode::InvalidConfig,
          "dyadic grid needs 1 <= k_min and at least 6 lags");
  GemanReport out;
  const double limit = model.first_degenerate_lag();
  try {
    for (int k = opt.k_min; k <= opt.k_max; ++k) {
      const double tau = std::ldexp(1.0, -k);
      if (!(tau < limit)) continue;
      out.tau.push_back(tau);
      out.sigma2.push_back(sigma2(model, tau));
      out.spectral.push_back(model.terms(tau).D);
    }
  } catch (const Error& e) {
    if (e.code() != ErrorCode::InconclusiveTail) throw;
    return out;
  }
  const double scale = model.lambda2();
  out.sigma_form = classify_sequence(out.tau, out.sigma2, scale, opt);
  out.spectral_form = classify_sequence(out.tau, out.spectral, scale, opt);
  out.alpha = out.sigma_form.alpha;
  out.alpha_se = out.sigma_form.alpha_se;
  out.cls = out.sigma_form.cls == out.spectral_form.cls ? out.sigma_form.cls : GemanClass::Inconclusive;
  return out;
}

// ---------------------------------------------------------------------------
// Moment reports
// ---------------------------------------------------------------------------

struct GemanSummary {
  GemanClass cls = GemanClass::Inconclusive;
  double alpha = kNaN;
  double alpha_se = kNaN;
};

struct MomentReport {
  double mean = 0.0;
  MomentValue second_factorial;
  MomentValue second_moment;
  double quad_error = 0.0;
  GemanSummary geman;
  double inner_mc_se = 0.0;
  /// Integrand samples (lag or radius, value) at the quadrature nodes.
  std::vector<std::array<double, 2>> trace;
};

inline GemanSummary summarize(const GemanReport& g) { return {g.cls, g.alpha, g.alpha_se}; }

// ---------------------------------------------------------------------------
// One dimension
// ---------------------------------------------------------------------------

/// Expected number of u-crossings on [0, T].
inline double rice_mean_1d(const CovarianceModel1D& model, double u, double T) {
  require(T > 0.0, ErrorCode::InvalidConfig, "interval length must be positive");
  return T / kPi * std::sqrt(model.lambda2()) * std::exp(-0.5 * u * u);
}

/// tau -> (1/pi)(T - tau) E_C|X'(0) X'(tau)| exp(-u^2/(1+r)) / sqrt(1 - r^2).
class KacRiceIntegrand1D {
 public:
  struct Components {
    double tau = 0.0;
    Regression1D reg;
    double correlation = 0.0;  // conditional correlation of (X'(0), X'(tau))
    double inner = 0.0;        // E_C|X'(0) X'(tau)|
    double density = 0.0;      // p_{X(0),X(tau)}(u, u)
    double value = 0.0;
  };

  KacRiceIntegrand1D(const CovarianceModel1D& model, double u, double T) : model_(&model), u_(u), T_(T) {}

  [[nodiscard]] Components components(double tau) const {
    Components c;
    c.tau = tau;
    c.reg = regression_1d(*model_, tau, u_);
    const Regression1D& q = c.reg;
    c.correlation = q.sigma2 > 0.0 ? std::clamp(q.cond_cov / q.sigma2, -1.0, 1.0) : 0.0;
    c.inner = abs_product_mean(q.mu2, q.mu1, q.sigma2, q.sigma2, q.cond_cov);
    c.density = std::exp(-u_ * u_ / (1.0 + q.r)) / (2.0 * kPi * std::sqrt(q.det));
    c.value = 2.0 * std::max(0.0, T_ - tau) * c.inner * c.density;
    return c;
  }

  double operator()(double tau) const { return components(tau).value; }

 private:
  const CovarianceModel1D* model_;
  double u_;
  double T_;
};

struct QuadConfig {
  double rel_tol = 1e-9;
  /// Relative error estimate beyond which the quadrature is declared non-convergent.
  double fail_tol = 1e-5;
  unsigned max_depth = 20;
  /// Lags below tau_min_rel * T are covered by a fitted tail estimate; the
  /// same estimate from sqrt(tau_min_rel) * T gives the tail error.
  double tau_min_rel = 1e-30;
  GemanOptions geman;
};

namespace detail {

// Integral of g over (0, tau_min] from g(tau_min) and the classifier's fit.
inline double small_lag_remainder(double g_tau_min, double tau_min, const GemanFit& fit, double alpha_tol) {
  if (fit.identically_zero || g_tau_min <= 0.0) return 0.0;
  const double mass = g_tau_min * tau_min;
  if (std::isfinite(fit.alpha) && fit.alpha >= alpha_tol) return mass / fit.alpha;
  if (std::isfinite(fit.loglog_slope) && fit.loglog_slope < -1.0)
    return mass * (-std::log(tau_min)) / (-fit.loglog_slope - 1.0);
  return mass / alpha_tol;
}

}  // namespace detail

/// E[N_u(N_u - 1)] on [0, T]: classifier first, then adaptive Gauss-Kronrod
/// in s = ln tau near 0 and in tau beyond.
inline MomentReport second_factorial_moment_1d(const CovarianceModel1D& model, double u, double T,
                                               const QuadConfig& cfg = {}) {
  require(T > 0.0, ErrorCode::InvalidConfig, "interval length must be positive");
  if (!(T < model.first_degenerate_lag()))
    fail(ErrorCode::DegenerateLag, "T must lie below the first zero of 1 - r^2 (" +
                                       std::to_string(model.first_degenerate_lag()) + ")");
  MomentReport rep;
  rep.mean = rice_mean_1d(model, u, T);
  const GemanReport g = geman_classify(model, cfg.geman);
  rep.geman = summarize(g);
  if (g.cls == GemanClass::Diverges) {
    rep.second_factorial = MomentValue::unbounded();
    rep.second_moment = MomentValue::unbounded();
    return rep;
  }

  const KacRiceIntegrand1D f(model, u, T);
  const double tau_min = cfg.tau_min_rel * T;
  const double tau_mid = std::sqrt(cfg.tau_min_rel) * T;
  const double tau_split = std::min(T, 1.0 / std::sqrt(model.lambda2()));
  using GK = boost::math::quadrature::gauss_kronrod<double, 15>;

  std::vector<std::array<double, 2>> trace;
  auto in_log = [&](double s) {
    const double tau = std::exp(s);
    const double v = f(tau) * tau;
    trace.push_back({tau, v / tau});
    return v;
  };
  auto in_lin = [&](double tau) {
    const double v = f(tau);
    trace.push_back({tau, v});
    return v;
  };
  double err[3] = {0, 0, 0}, l1[3] = {0, 0, 0};
  const double deep = GK::integrate(in_log, std::log(tau_min), std::log(tau_mid), cfg.max_depth, cfg.rel_tol,
                                    &err[0], &l1[0]);
  const double near = GK::integrate(in_log, std::log(tau_mid), std::log(tau_split), cfg.max_depth, cfg.rel_tol,
                                    &err[1], &l1[1]);
  double far = 0.0;
  if (tau_split < T) far = GK::integrate(in_lin, tau_split, T, cfg.max_depth, cfg.rel_tol, &err[2], &l1[2]);

  const double alpha_tol = cfg.geman.alpha_tol;
  const double coarse = near + far + detail::small_lag_remainder(f(tau_mid), tau_mid, g.sigma_form, alpha_tol);
  const double total = deep + near + far + detail::small_lag_remainder(f(tau_min), tau_min, g.sigma_form, alpha_tol);
  const double gk_err = err[0] + err[1] + err[2];
  const double scale = std::max({l1[0] + l1[1] + l1[2], rep.mean * rep.mean, 1e-300});
  if (!(gk_err <= cfg.fail_tol * scale) || !std::isfinite(total))
    fail(ErrorCode::QuadratureNonConvergent, "refinements disagree: error estimate " + std::to_string(gk_err) +
                                                 " for value " + std::to_string(total));
  const double err_total = gk_err + std::abs(total - coarse);
  std::sort(trace.begin(), trace.end());
  rep.trace = std::move(trace);
  rep.second_factorial = MomentValue::finite(std::max(0.0, total));
  rep.second_moment = MomentValue::finite(rep.second_factorial.value + rep.mean);
  rep.quad_error = err_total;
  return rep;
}

// ---------------------------------------------------------------------------
// Two dimensions: radial reduction
// ---------------------------------------------------------------------------

struct Rectangle {
  double a = 1.0;
  double b = 1.0;

  [[nodiscard]] double area() const { return a * b; }
  [[nodiscard]] double diameter() const { return std::hypot(a, b); }
};

/// W(r) = integral over directions theta of |S cap (S + r e_theta)|, so that
/// the double integral of g(|t - s|) over S x S equals int g(r) r W(r) dr.
inline double overlap_kernel(const Rectangle& s, double r) {
  if (r < 0.0) return 0.0;
  const double a = s.a, b = s.b;
  if (r <= std::min(a, b)) return 2.0 * kPi * a * b - 4.0 * r * (a + b) + 2.0 * r * r;
  const double t1 = std::acos(std::min(1.0, a / r));
  const double t2 = std::asin(std::min(1.0, b / r));
  if (t2 <= t1) return 0.0;
  auto F = [&](double t) {
    const double st = std::sin(t);
    return a * b * t + a * r * std::cos(t) - b * r * st + 0.5 * r * r * st * st;
  };
  return std::max(0.0, 4.0 * (F(t2) - F(t1)));
}

struct InnerMCOptions {
  double rel_se = 0.01;
  std::size_t max_draws = 1'000'000;
  std::size_t batch_pairs = 1024;
  std::uint64_t seed = 20240611;
};

struct InnerMC {
  double mean = 0.0;
  double se = 0.0;
  std::size_t draws = 0;
};

/// Antithetic Monte Carlo: pair(rng) returns the average of f over (Z, -Z).
template <class Pair>
InnerMC antithetic_mc(Pair&& pair, RandomStream& rng, const InnerMCOptions& opt) {
  double sum = 0.0, sumsq = 0.0;
  std::size_t pairs = 0;
  const std::size_t max_pairs = std::max<std::size_t>(1, opt.max_draws / 2);
  InnerMC out;
  for (;;) {
    const std::size_t todo = std::min(opt.batch_pairs, max_pairs - pairs);
    for (std::size_t i = 0; i < todo; ++i) {
      const double v = pair(rng);
      sum += v;
      sumsq += v * v;
    }
    pairs += todo;
    out.mean = sum / pairs;
    const double var = pairs > 1 ? std::max(0.0, (sumsq - sum * out.mean) / (pairs - 1)) : 0.0;
    out.se = std::sqrt(var / pairs);
    out.draws = 2 * pairs;
    if (out.se == 0.0 && pairs >= opt.batch_pairs) return out;
    if (pairs >= 4 * opt.batch_pairs && out.se <= opt.rel_se * std::abs(out.mean)) return out;
    if (pairs >= max_pairs) break;
  }
  fail(ErrorCode::InnerMCBudgetExceeded, "relative SE " + std::to_string(out.se / std::abs(out.mean)) +
                                             " above target after " + std::to_string(out.draws) + " draws");
}

namespace detail {

// Draws (x0, x1) from a pair with equal variances v and covariance c, means m0, m1.
struct SymmetricPair {
  double m0 = 0.0, m1 = 0.0, alpha = 0.0, beta = 0.0;

  SymmetricPair(double mean0, double mean1, double v, double c)
      : m0(mean0), m1(mean1), alpha(std::sqrt(std::max(0.0, 0.5 * (v + c)))),
        beta(std::sqrt(std::max(0.0, 0.5 * (v - c)))) {}

  // deviations for (z1, z2); the sample is (m0 + d0, m1 + d1)
  [[nodiscard]] std::pair<double, double> dev(double z1, double z2) const {
    return {alpha * z1 + beta * z2, alpha * z1 - beta * z2};
  }
};

// Conditional law of one coordinate's gradients at 0 and r e1 in R^2:
// longitudinal pair (d1 X(0), d1 X(r e1)) and transverse pair (d2 X(0), d2 X(r e1)).
struct GradientPairLaw {
  SymmetricPair longitudinal;
  SymmetricPair transverse;
  double lon_second_moment = 0.0;  // E[(d1 X(0))^2]
  double tr_second_moment = 0.0;   // E[(d2 X(0))^2]

  static GradientPairLaw make(const RadialProfile& p, double r, double u) {
    const LCov l = lcov_closed_form(p, 2, r, u);
    return {SymmetricPair(l.mean(0), l.mean(2), l.cov(0, 0), l.cov(0, 2)),
            SymmetricPair(0.0, 0.0, l.cov(1, 1), l.cov(1, 3)), l.cov(0, 0) + l.mean(0) * l.mean(0), l.cov(1, 1)};
  }
};

// p_{X(0), X(r e1)}(u, u) for one coordinate.
inline double pair_density(const RadialProfile& p, double r, double u) {
  const LagTerms t = p.restriction().terms(r);
  const double det = t.A * (2.0 - t.A);
  require(det > 0.0, ErrorCode::DegenerateLag, "1 - rho^2 vanishes at r = " + std::to_string(r));
  return std::exp(-u * u / (2.0 - t.A)) / (2.0 * kPi * std::sqrt(det));
}

struct RadialPanel {
  double lo = 0.0, hi = 0.0;
};

// Panels on (r0, diam]: geometric near 0, uniform up to min side, then the
// kinks of W at min side, max side, diameter.
inline std::vector<RadialPanel> radial_panels(const Rectangle& s, int geometric_levels) {
  const double m = std::min(s.a, s.b), M = std::max(s.a, s.b), D = s.diameter();
  std::vector<RadialPanel> out;
  double lo = m * std::ldexp(1.0, -geometric_levels);
  const double uniform = m / 8.0;
  while (lo < uniform * (1 - 1e-12)) {
    const double hi = std::min(2.0 * lo, uniform);
    out.push_back({lo, hi});
    lo = hi;
  }
  for (int k = 1; k < 8; ++k) out.push_back({k * uniform, (k + 1) * uniform});
  auto split = [&](double a, double b, int n) {
    for (int k = 0; k < n; ++k) out.push_back({a + (b - a) * k / n, a + (b - a) * (k + 1) / n});
  };
  if (M > m) split(m, M, std::clamp(static_cast<int>(std::ceil((M - m) / uniform)), 1, 32));
  split(M, D, 4);
  return out;
}

struct NodeValue {
  double value = 0.0;
  double se = 0.0;
};

// Radial integral of g(r) (value and inner SE) with G7-K15 on fixed panels.
// Nodes are evaluated concurrently and reduced in a fixed order.
template <class G>
MomentReport radial_integral(const Rectangle& s, G&& g, int geometric_levels) {
  using K15 = boost::math::quadrature::gauss_kronrod<double, 15>;
  using G7 = boost::math::quadrature::gauss<double, 7>;
  const auto& xk = K15::abscissa();
  const auto& wk = K15::weights();
  const auto& wg = G7::weights();
  const auto panels = radial_panels(s, geometric_levels);

  std::vector<double> nodes;
  for (const auto& p : panels) {
    const double c = 0.5 * (p.lo + p.hi), h = 0.5 * (p.hi - p.lo);
    for (std::size_t i = 0; i < xk.size(); ++i) {
      nodes.push_back(c - h * xk[i]);
      if (i > 0) nodes.push_back(c + h * xk[i]);
    }
  }
  const double r0 = panels.front().lo;
  nodes.push_back(r0);
  std::vector<NodeValue> vals(nodes.size());
  parallel_for(nodes.size(), [&](std::size_t i) { vals[i] = g(nodes[i], i); });

  MomentReport rep;
  double total = 0.0, err = 0.0, var = 0.0;
  std::size_t idx = 0;
  for (const auto& p : panels) {
    const double h = 0.5 * (p.hi - p.lo);
    double k15 = 0.0, g7 = 0.0, v = 0.0;
    for (std::size_t i = 0; i < xk.size(); ++i) {
      const int copies = i > 0 ? 2 : 1;
      for (int c = 0; c < copies; ++c) {
        const NodeValue& nv = vals[idx];
        rep.trace.push_back({nodes[idx], nv.value});
        ++idx;
        k15 += wk[i] * nv.value;
        if (i % 2 == 0) g7 += wg[i / 2] * nv.value;
        v += (wk[i] * h * nv.se) * (wk[i] * h * nv.se);
      }
    }
    total += h * k15;
    err += h * std::abs(k15 - g7);
    var += v;
  }
  // (0, r0]: the integrand is O(r) there
  const NodeValue& first = vals.back();
  total += 0.5 * first.value * r0;
  err += 0.5 * first.value * r0;
  std::sort(rep.trace.begin(), rep.trace.end());
  rep.second_factorial = MomentValue::finite(std::max(0.0, total));
  rep.quad_error = err;
  rep.inner_mc_se = std::sqrt(var);
  return rep;
}

}  // namespace detail

/// E[N(u, S)] = |S| E|det X'(0)| p_X(u) = |S| sqrt(lambda_1 lambda_2) phi(u_1) phi(u_2).
inline double first_moment_2d(const IsotropicFieldModel& field, std::array<double, 2> u, const Rectangle& s) {
  require(field.dim() == 2, ErrorCode::InvalidConfig, "root counting needs d = 2 coordinates");
  return s.area() * std::sqrt(field.coords[0].gradient_variance() * field.coords[1].gradient_variance()) *
         detail::norm_pdf(u[0]) * detail::norm_pdf(u[1]);
}

/// A(r, u) = E_C|det X'(0) det X'(r e1)| given X(0) = X(r e1) = u.
inline InnerMC jacobian_product_moment(const IsotropicFieldModel& field, double r, std::array<double, 2> u,
                                       RandomStream& rng, const InnerMCOptions& opt = {}) {
  require(field.dim() == 2, ErrorCode::InvalidConfig, "root counting needs d = 2 coordinates");
  const auto c1 = detail::GradientPairLaw::make(field.coords[0], r, u[0]);
  const auto c2 = detail::GradientPairLaw::make(field.coords[1], r, u[1]);
  auto pair = [&](RandomStream& g) {
    double z[8];
    for (double& x : z) x = g.normal();
    const auto [la0, la1] = c1.longitudinal.dev(z[0], z[1]);
    const auto [ta0, ta1] = c1.transverse.dev(z[2], z[3]);
    const auto [lb0, lb1] = c2.longitudinal.dev(z[4], z[5]);
    const auto [tb0, tb1] = c2.transverse.dev(z[6], z[7]);
    double acc = 0.0;
    for (double sign : {1.0, -1.0}) {
      // rows: grad X_1 = (d1, d2), grad X_2 = (d1, d2)
      const double det0 = (c1.longitudinal.m0 + sign * la0) * (sign * tb0) - (sign * ta0) * (c2.longitudinal.m0 + sign * lb0);
      const double det1 = (c1.longitudinal.m1 + sign * la1) * (sign * tb1) - (sign * ta1) * (c2.longitudinal.m1 + sign * lb1);
      acc += std::abs(det0 * det1);
    }
    return 0.5 * acc;
  };
  return antithetic_mc(pair, rng, opt);
}

/// Cauchy-Schwarz bound E_C[det(X'(0)^T X'(0))] on A(r, u).
inline double jacobian_cs_bound(const IsotropicFieldModel& field, double r, std::array<double, 2> u) {
  const auto c1 = detail::GradientPairLaw::make(field.coords[0], r, u[0]);
  const auto c2 = detail::GradientPairLaw::make(field.coords[1], r, u[1]);
  return c1.lon_second_moment * c2.tr_second_moment + c1.tr_second_moment * c2.lon_second_moment;
}

/// Two-point density p(u, u) = prod_i p_{X_i(0), X_i(r e1)}(u_i, u_i).
inline double pair_density_2d(const IsotropicFieldModel& field, double r, std::array<double, 2> u) {
  return detail::pair_density(field.coords[0], r, u[0]) * detail::pair_density(field.coords[1], r, u[1]);
}

struct Radial2DOptions {
  InnerMCOptions inner;
  int geometric_levels = 10;
  GemanOptions geman{2, 30};
};

/// E[N(u, S)(N(u, S) - 1)] for the roots of X = (X_1, X_2) in a rectangle,
/// as int A(r, u) p(r) r W(r) dr with A by inner Monte Carlo.
inline MomentReport second_moment_2d_zero(const IsotropicFieldModel& field, std::array<double, 2> u,
                                          const Rectangle& s, const Radial2DOptions& opt = {}) {
  require(field.dim() == 2, ErrorCode::InvalidConfig, "root counting needs d = 2 coordinates");
  require(s.a > 0.0 && s.b > 0.0, ErrorCode::InvalidConfig, "rectangle sides must be positive");
  const std::uint64_t seed = derive_seed(opt.inner.seed, 0x2d2d);
  auto g = [&](double r, std::size_t node) {
    RandomStream rng(seed, node);
    const InnerMC a = jacobian_product_moment(field, r, u, rng, opt.inner);
    const double w = pair_density_2d(field, r, u) * r * overlap_kernel(s, r);
    return detail::NodeValue{a.mean * w, a.se * w};
  };
  MomentReport rep = detail::radial_integral(s, g, opt.geometric_levels);
  rep.mean = first_moment_2d(field, u, s);
  rep.second_moment = MomentValue::finite(rep.second_factorial.value + rep.mean);

  std::vector<double> rk, sk;
  for (int k = opt.geman.k_min; k <= opt.geman.k_max; ++k) {
    rk.push_back(std::ldexp(1.0, -k));
    sk.push_back(sigma2_max(field, rk.back()));
  }
  double scale = 0.0;
  for (const auto& p : field.coords) scale = std::max(scale, p.gradient_variance());
  const GemanFit fit = classify_sequence(rk, sk, scale, opt.geman);
  rep.geman = {fit.cls, fit.alpha, fit.alpha_se};
  return rep;
}

// ---------------------------------------------------------------------------
// Level-curve length of a scalar field on R^2
// ---------------------------------------------------------------------------

/// E[length of {X = u} in K] = |K| sqrt(lambda) exp(-u^2/2) / 2.
inline double length_first_moment(const RadialProfile& p, double u, const Rectangle& k) {
  return 0.5 * k.area() * std::sqrt(p.gradient_variance()) * std::exp(-0.5 * u * u);
}

/// B(r, u) = E_C[|grad X(0)| |grad X(r e1)|] given X(0) = X(r e1) = u.
inline InnerMC gradient_norm_product(const RadialProfile& p, double r, double u, RandomStream& rng,
                                     const InnerMCOptions& opt = {}) {
  const auto law = detail::GradientPairLaw::make(p, r, u);
  auto pair = [&](RandomStream& g) {
    const double z1 = g.normal(), z2 = g.normal(), z3 = g.normal(), z4 = g.normal();
    const auto [l0, l1] = law.longitudinal.dev(z1, z2);
    const auto [t0, t1] = law.transverse.dev(z3, z4);
    double acc = 0.0;
    for (double sign : {1.0, -1.0})
      acc += std::hypot(law.longitudinal.m0 + sign * l0, t0) * std::hypot(law.longitudinal.m1 + sign * l1, t1);
    return 0.5 * acc;
  };
  return antithetic_mc(pair, rng, opt);
}

/// E[(length of {X = u} in K)^2] as int B(r, u) p(r) r W(r) dr. Lengths have
/// no diagonal atom, so second_factorial and second_moment coincide.
inline MomentReport length_second_moment_2d_to_1d(const RadialProfile& p, double u, const Rectangle& k,
                                                  const Radial2DOptions& opt = {}) {
  require(k.a > 0.0 && k.b > 0.0, ErrorCode::InvalidConfig, "rectangle sides must be positive");
  require(p.gradient_variance() > 0.0, ErrorCode::InvalidModel, "gradient distribution is degenerate");
  const std::uint64_t seed = derive_seed(opt.inner.seed, 0x1e1e);
  auto g = [&](double r, std::size_t node) {
    RandomStream rng(seed, node);
    const InnerMC b = gradient_norm_product(p, r, u, rng, opt.inner);
    const double w = detail::pair_density(p, r, u) * r * overlap_kernel(k, r);
    return detail::NodeValue{b.mean * w, b.se * w};
  };
  MomentReport rep = detail::radial_integral(k, g, opt.geometric_levels);
  rep.mean = length_first_moment(p, u, k);
  rep.second_moment = rep.second_factorial;
  rep.geman = {GemanClass::Converges, kNaN, kNaN};
  return rep;
}

// ---------------------------------------------------------------------------
// Critical points of a scalar field on R^2
// ---------------------------------------------------------------------------

/// Conditioning for S2_max(r) = max Var(d_i d_lambda Y(0) | ...):
/// GradientBoth uses grad Y(0), grad Y(lambda r); HessianAtSecond uses
/// grad Y(0), Hess Y(lambda r).
enum class CriticalVariant { GradientBoth, HessianAtSecond };

struct CriticalOptions {
  int k_min = 2;
  int k_max = 24;
  int directions = 8;
  CriticalVariant variant = CriticalVariant::GradientBoth;
  GemanOptions geman;
};

struct CriticalReport {
  GemanFit fit;
  std::vector<double> r;
  std::vector<double> sbar2;
};

using float128 = boost::multiprecision::float128;

/// S2_max(r) evaluated in quad precision by generic conditioning.
template <class Kernel>
double critical_sbar2(const Kernel& kernel, double r, CriticalVariant variant = CriticalVariant::GradientBoth,
                      int directions = 8) {
  using S = float128;
  require(r > 0.0, ErrorCode::DegenerateLag, "critical-point condition needs r > 0");
  std::vector<Observable> obs{{0, 2, 0}, {0, 1, 1}, {0, 0, 2}, {0, 1, 0}, {0, 0, 1}};
  if (variant == CriticalVariant::GradientBoth) {
    obs.push_back({1, 1, 0});
    obs.push_back({1, 0, 1});
  } else {
    obs.push_back({1, 2, 0});
    obs.push_back({1, 1, 1});
    obs.push_back({1, 0, 2});
  }
  std::vector<int> observed;
  for (int i = 3; i < static_cast<int>(obs.size()); ++i) observed.push_back(i);
  double best = 0.0;
  for (int k = 0; k < directions; ++k) {
    const S angle = S(kPi) * S(k) / S(directions);
    const S l1 = cos(angle), l2 = sin(angle);
    const std::vector<std::array<S, 2>> points{{S(0), S(0)}, {S(r) * l1, S(r) * l2}};
    const Mat<S> cov = joint_covariance<S>(kernel, points, obs);
    const Vec<S> mean = Vec<S>::Zero(static_cast<int>(obs.size()));
    const Vec<S> values = Vec<S>::Zero(static_cast<int>(observed.size()));
    const auto cond = condition<S>(mean, cov, observed, values);
    // targets (d11, d12, d22) at 0
    const std::array<std::array<S, 3>, 2> coef{{{l1, l2, S(0)}, {S(0), l1, l2}}};
    for (const auto& c : coef) {
      S v = S(0);
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) v += c[a] * cond.cov(a, b) * c[b];
      best = std::max(best, static_cast<double>(v));
    }
  }
  return best;
}

/// Classifies the integral of S2_max(r) / r at 0 on r_k = 2^-k.
template <class Kernel>
CriticalReport critical_condition(const Kernel& kernel, const CriticalOptions& opt = {}) {
  CriticalReport out;
  for (int k = opt.k_min; k <= opt.k_max; ++k) {
    out.r.push_back(std::ldexp(1.0, -k));
    out.sbar2.push_back(critical_sbar2(kernel, out.r.back(), opt.variant, opt.directions));
  }
  const auto d0 = kernel.template kernel_derivs<double>(0.0, 0.0, 4);
  const double scale = std::max({d0[4][0], d0[2][2], d0[0][4]});
  out.fit = classify_sequence(out.r, out.sbar2, scale, opt.geman);
  return out;
}

}  // namespace crossmoments
