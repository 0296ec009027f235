#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/special_functions/erf.hpp>

#include "crossmoments/covmodels.hpp"
#include "crossmoments/error.hpp"
#include "crossmoments/fields.hpp"
#include "crossmoments/mp_eigen.hpp"
#include "crossmoments/numeric.hpp"

namespace crossmoments {

/// Law of a target Gaussian block given an observed block.
template <class S>
struct GaussianConditional {
  Vec<S> mean;
  Mat<S> cov;
  std::vector<int> target_indices;
  double jitter = 0.0;  // relative jitter that had to be added, 0 if none
};

struct ConditionOptions {
  double jitter_first = 1e-12;
  double jitter_second = 1e-10;
  /// Largest acceptable condition number of the observed block; 0 picks
  /// 1e-2 / machine epsilon of the scalar type.
  double max_condition = 0.0;
};

/// Schur-complement conditioning of N(mean, cov) on x[observed] = values.
/// The conditional covariance never touches `values`.
template <class S>
GaussianConditional<S> condition(const Vec<S>& mean, const Mat<S>& cov, const std::vector<int>& observed,
                                 const Vec<S>& values, const ConditionOptions& opt = {}) {
  const int n = static_cast<int>(mean.size());
  require(cov.rows() == n && cov.cols() == n, ErrorCode::InvalidConfig, "mean/cov dimension mismatch");
  require(static_cast<int>(values.size()) == static_cast<int>(observed.size()), ErrorCode::InvalidConfig,
          "one observed value per observed index");
  std::vector<char> is_obs(static_cast<std::size_t>(n), 0);
  for (int i : observed) {
    require(i >= 0 && i < n && !is_obs[static_cast<std::size_t>(i)], ErrorCode::InvalidConfig,
            "observed indices must be distinct and in range");
    is_obs[static_cast<std::size_t>(i)] = 1;
  }
  std::vector<int> target;
  for (int i = 0; i < n; ++i)
    if (!is_obs[static_cast<std::size_t>(i)]) target.push_back(i);

  const int no = static_cast<int>(observed.size());
  const int nt = static_cast<int>(target.size());
  Mat<S> Soo(no, no), Sto(nt, no), Stt(nt, nt);
  for (int a = 0; a < no; ++a)
    for (int b = 0; b < no; ++b) Soo(a, b) = cov(observed[a], observed[b]);
  for (int a = 0; a < nt; ++a) {
    for (int b = 0; b < no; ++b) Sto(a, b) = cov(target[a], observed[b]);
    for (int b = 0; b < nt; ++b) Stt(a, b) = cov(target[a], target[b]);
  }
  Vec<S> resid(no);
  for (int a = 0; a < no; ++a) resid(a) = values(a) - mean(observed[a]);

  GaussianConditional<S> out;
  out.target_indices = target;
  out.mean.resize(nt);
  for (int a = 0; a < nt; ++a) out.mean(a) = mean(target[a]);
  out.cov = Stt;
  if (no == 0) return out;

  const double eps = static_cast<double>(std::numeric_limits<S>::epsilon());
  const double cap = opt.max_condition > 0.0 ? opt.max_condition : 1e-2 / eps;
  S scale = S(0);
  for (int a = 0; a < no; ++a) scale += Soo(a, a);
  scale /= S(no);
  require(scale > S(0), ErrorCode::DegenerateObservation, "observed block has zero variance");

  auto condition_number = [&](const Mat<S>& m) {
    Eigen::SelfAdjointEigenSolver<Mat<S>> es(m, Eigen::EigenvaluesOnly);
    const S lo = es.eigenvalues().minCoeff();
    const S hi = es.eigenvalues().maxCoeff();
    return lo > S(0) ? static_cast<double>(hi / lo) : std::numeric_limits<double>::infinity();
  };

  const double cond = condition_number(Soo);
  if (cond > cap)
    fail(ErrorCode::DegenerateObservation,
         "observed covariance block has condition number " + std::to_string(cond));
  // Cholesky can still fail from rounding on a barely admissible block;
  // escalate a relative diagonal jitter before giving up.
  for (double jitter : {0.0, opt.jitter_first, opt.jitter_second}) {
    Mat<S> A = Soo;
    if (jitter > 0.0) A.diagonal().array() += S(jitter) * scale;
    Eigen::LLT<Mat<S>> llt(A);
    if (llt.info() != Eigen::Success) continue;
    const Mat<S> W = llt.matrixL().solve(Sto.transpose());  // L^-1 S_ot
    out.cov = Stt - W.transpose() * W;
    out.cov = (out.cov + out.cov.transpose()) / S(2);
    out.mean += Sto * llt.solve(resid);
    out.jitter = jitter;
    return out;
  }
  fail(ErrorCode::DegenerateObservation, "observed covariance block is singular beyond tolerance");
}

/// Conditional quantities of the 1D pair at lag tau given X(0) = X(tau) = u.
struct Regression1D {
  double r = 0.0;
  double dr = 0.0;
  double det = 0.0;        // 1 - r^2 = det Var(X(0), X(tau))
  double mu1 = 0.0;        // E[X'(tau) | ...] = r' u / (1 + r)
  double mu2 = 0.0;        // E[X'(0)   | ...] = -mu1
  double sigma2 = 0.0;     // Var(X'(0) | ...) = Var(X'(tau) | ...)
  double cond_cov = 0.0;   // Cov(X'(0), X'(tau) | ...) = -r'' - r r'^2 / (1 - r^2)
  double spectral = 0.0;   // lambda2 + r''(tau)
};

inline Regression1D regression_1d(const CovarianceModel1D& model, double tau, double u) {
  tau = std::abs(tau);
  require(tau > 0.0, ErrorCode::DegenerateLag, "regression needs tau > 0");
  const LagTerms t = model.terms(tau);
  Regression1D q;
  q.r = 1.0 - t.A;
  q.dr = -t.B;
  q.det = t.A * (2.0 - t.A);
  q.sigma2 = sigma2(model, tau);
  q.mu1 = q.dr * u / (2.0 - t.A);
  q.mu2 = -q.mu1;
  q.spectral = t.D;
  // -r'' - r r'^2/(1-r^2) = sigma^2 + r'^2/(1+r) - (lambda2 + r'')
  q.cond_cov = model.kind() == ModelKind::SineCosine ? 0.0
                                                      : q.sigma2 + t.B * t.B / (2.0 - t.A) - t.D;
  return q;
}

/// Joint covariance of (X(0), X(tau), X'(0), X'(tau)) from (r, r', r'').
template <class S>
Mat<S> pair_joint_cov_1d(S lambda2, S r, S dr, S d2r) {
  Mat<S> c(4, 4);
  // Cov(X^(a)(s), X^(b)(t)) = (-1)^b r^(a+b)(s - t)
  c << S(1), r, S(0), dr,
       r, S(1), -dr, S(0),
       S(0), -dr, lambda2, -d2r,
       dr, S(0), -d2r, lambda2;
  return c;
}

/// Joint covariance of (X(0), X(r e1), grad X(0), grad X(r e1)) for one
/// isotropic coordinate in R^d, from rho(r^2), rho'(r^2), rho''(r^2), rho'(0).
/// d_a K(h) = 2 h_a rho', d_a d_b K(h) = 2 delta_ab rho' + 4 h_a h_b rho''.
template <class S>
Mat<S> isotropic_pair_joint_cov(int d, S r, S rho, S rho1, S rho2, S rho1_zero) {
  const int n = 2 + 2 * d;
  Mat<S> c = Mat<S>::Zero(n, n);
  // index helpers
  const int X0 = 0, X1 = 1;
  auto G0 = [](int a) { return 2 + a; };
  auto G1 = [d](int a) { return 2 + d + a; };
  c(X0, X0) = c(X1, X1) = S(1);
  c(X0, X1) = c(X1, X0) = rho;
  // h = p - q. For (grad X(0))_1 vs X(r e1): h = -r e1, d_1 K = -2 r rho'.
  c(G0(0), X1) = c(X1, G0(0)) = S(-2) * r * rho1;
  // (grad X(r e1))_1 vs X(0): h = r e1 -> 2 r rho'.
  c(G1(0), X0) = c(X0, G1(0)) = S(2) * r * rho1;
  for (int a = 0; a < d; ++a) {
    c(G0(a), G0(a)) = c(G1(a), G1(a)) = S(-2) * rho1_zero;
    // Cov(d_a X(0), d_a X(r e1)) = -d_a d_a K(-r e1)
    const S h2 = a == 0 ? r * r : S(0);
    c(G0(a), G1(a)) = c(G1(a), G0(a)) = -(S(2) * rho1 + S(4) * h2 * rho2);
  }
  return c;
}

/// Closed-form conditional law of (grad X_i(0), grad X_i(r e1)) given
/// X_i(0) = X_i(r e1) = u for one coordinate with profile rho.
///
/// Ordering (d_1 X(0), ..., d_d X(0), d_1 X(r e1), ..., d_d X(r e1)).
/// Entries (1,1), (d+1,d+1): sigma^2(r) of the restriction R(t) = rho(t^2).
/// Entry (1,d+1): b(r) sigma(r) = -R'' - R R'^2 / (1 - R^2).
/// Transverse: variance -2 rho'(0), coupling (j, d+j) = -2 rho'(r^2).
struct LCov {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

inline LCov lcov_closed_form(const RadialProfile& profile, int d, double r, double u = 0.0) {
  require(d >= 1, ErrorCode::InvalidConfig, "dimension must be >= 1");
  const Regression1D q = regression_1d(profile.restriction(), r, u);
  const double lam = profile.gradient_variance();
  const auto rd = profile.derivs<double>(r * r, 1);
  LCov out;
  out.mean = Eigen::VectorXd::Zero(2 * d);
  out.cov = Eigen::MatrixXd::Zero(2 * d, 2 * d);
  out.mean(0) = q.mu2;
  out.mean(d) = q.mu1;
  out.cov(0, 0) = out.cov(d, d) = q.sigma2;
  out.cov(0, d) = out.cov(d, 0) = q.cond_cov;
  for (int j = 1; j < d; ++j) {
    out.cov(j, j) = out.cov(d + j, d + j) = lam;
    out.cov(j, d + j) = out.cov(d + j, j) = -2.0 * rd[1];
  }
  return out;
}

/// sigma^2_max(r) = max_i sigma_i^2(r).
inline double sigma2_max(const IsotropicFieldModel& field, double r) {
  double best = 0.0;
  for (const auto& p : field.coords) best = std::max(best, sigma2(p.restriction(), r));
  return best;
}

namespace detail {

inline double norm_cdf(double x) { return 0.5 * boost::math::erfc(-x / std::sqrt(2.0)); }
inline double norm_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * kPi); }

// E|N(mu, s^2)|
inline double folded_mean(double mu, double s) {
  if (s <= 0.0) return std::abs(mu);
  const double z = mu / s;
  return s * std::sqrt(2.0 / kPi) * std::exp(-0.5 * z * z) + mu * (1.0 - 2.0 * norm_cdf(-z));
}

}  // namespace detail

/// E|Y1 Y2| for unit-variance Y1, Y2 with means m1, m2 and correlation rho.
///
/// Uses Y2 = m2 + rho (Y1 - m1) + sqrt(1 - rho^2) Z: the expectation over Z
/// is a folded-normal mean in closed form and the outer Gaussian integral is
/// composite Gauss-Legendre split at the kink y1 = 0 and graded around the
/// (soft) kink where the inner mean vanishes.
inline double abs_moment(double m1, double m2, double rho) {
  rho = std::clamp(rho, -1.0, 1.0);
  const double s = std::sqrt(std::max(0.0, 1.0 - rho * rho));
  auto integrand = [&](double y) {
    return detail::norm_pdf(y - m1) * std::abs(y) * detail::folded_mean(m2 + rho * (y - m1), s);
  };
  const double lo = m1 - 12.0, hi = m1 + 12.0;
  std::vector<double> cuts{lo, hi};
  if (lo < 0.0 && 0.0 < hi) cuts.push_back(0.0);
  double kink = kInf, width = 0.0;
  if (rho != 0.0) {
    kink = m1 - m2 / rho;
    width = std::max(s / std::abs(rho), 1e-14 * (1.0 + std::abs(kink)));
    if (lo < kink && kink < hi) cuts.push_back(kink);
  }
  std::sort(cuts.begin(), cuts.end());

  using Rule = boost::math::quadrature::gauss<double, 20>;
  double total = 0.0;
  for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
    const double a = cuts[k], b = cuts[k + 1];
    if (b <= a) continue;
    const bool near_a = a == kink, near_b = b == kink;
    if (!near_a && !near_b) {
      total += numeric::integrate_panels(integrand, a, b, std::max(1, static_cast<int>(std::ceil(b - a))));
      continue;
    }
    // Geometric panels moving away from the kink.
    const double len = b - a;
    double start = 0.0, step = std::min({0.25 * width, 1.0, len});
    while (start < len) {
      const double end = std::min(len, start + step);
      total += near_a ? Rule::integrate(integrand, a + start, a + end)
                      : Rule::integrate(integrand, b - end, b - start);
      start = end;
      step = std::min(2.0 * step, 1.0);
    }
  }
  return total;
}

/// E|V1 V2| for a Gaussian pair with arbitrary means, variances, covariance.
inline double abs_product_mean(double mean1, double mean2, double var1, double var2, double cov) {
  var1 = std::max(var1, 0.0);
  var2 = std::max(var2, 0.0);
  if (var1 == 0.0 && var2 == 0.0) return std::abs(mean1 * mean2);
  if (var1 == 0.0) return std::abs(mean1) * detail::folded_mean(mean2, std::sqrt(var2));
  if (var2 == 0.0) return std::abs(mean2) * detail::folded_mean(mean1, std::sqrt(var1));
  const double s1 = std::sqrt(var1), s2 = std::sqrt(var2);
  return s1 * s2 * abs_moment(mean1 / s1, mean2 / s2, cov / (s1 * s2));
}

/// Probabilists' Hermite polynomial He_n(x) (He_2 = x^2 - 1).
inline double hermite_he(int n, double x) {
  if (n == 0) return 1.0;
  double h0 = 1.0, h1 = x;
  for (int k = 1; k < n; ++k) {
    const double h2 = x * h1 - k * h0;
    h0 = h1;
    h1 = h2;
  }
  return h1;
}

/// E[He_i(Y1) He_j(Y2)] = delta_ij rho^i i! for a standard pair with correlation rho.
inline double mehler_covariance(int i, int j, double rho) {
  require(i >= 0 && j >= 0, ErrorCode::InvalidConfig, "Hermite orders must be >= 0");
  if (i != j) return 0.0;
  return std::pow(rho, i) * detail::factorial(i);
}

/// Lower bound 1 + 2 rho^2 on Var(Y1 Y2) as stated for the centered pair.
/// This is E[(Ybar1 Ybar2)^2]; the variance of the centered product is
/// 1 + rho^2, see product_variance().
inline double product_variance_lower(double rho) { return 1.0 + 2.0 * rho * rho; }

/// Exact Var(Y1 Y2) for unit-variance Y1, Y2 with means m1, m2, correlation rho.
inline double product_variance(double m1, double m2, double rho) {
  return 1.0 + rho * rho + m1 * m1 + m2 * m2 + 2.0 * rho * m1 * m2;
}

}  // namespace crossmoments
