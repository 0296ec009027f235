#pragma once

#include <array>
#include <cmath>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "crossmoments/covmodels.hpp"
#include "crossmoments/error.hpp"
#include "crossmoments/mixture.hpp"

namespace crossmoments {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

/// d^{i+j} K / dh1^i dh2^j at one point, valid for i + j <= 4.
template <class S>
using DerivTable = std::array<std::array<S, 5>, 5>;

namespace detail {

// Truncated bivariate polynomial, total degree <= 4, c[i][j] for d1^i d2^j.
template <class S>
using Poly2 = std::array<std::array<S, 5>, 5>;

template <class S>
Poly2<S> poly_zero() {
  Poly2<S> p;
  for (auto& row : p) row.fill(S(0));
  return p;
}

template <class S>
Poly2<S> poly_mul(const Poly2<S>& a, const Poly2<S>& b) {
  Poly2<S> out = poly_zero<S>();
  for (int i1 = 0; i1 <= 4; ++i1)
    for (int j1 = 0; i1 + j1 <= 4; ++j1) {
      if (a[i1][j1] == S(0)) continue;
      for (int i2 = 0; i1 + j1 + i2 <= 4; ++i2)
        for (int j2 = 0; i1 + j1 + i2 + j2 <= 4; ++j2) out[i1 + i2][j1 + j2] += a[i1][j1] * b[i2][j2];
    }
  return out;
}

inline double factorial(int n) {
  double f = 1.0;
  for (int k = 2; k <= n; ++k) f *= k;
  return f;
}

}  // namespace detail

/// Isotropic covariance profile: Cov(X(s), X(t)) = rho(|s - t|^2), built
/// from a Gaussian scale-mixture 1D model R(tau) = rho(tau^2). Then
/// rho(q) = E[exp(-s q / 2)], rho^(k)(q) = E[(-s/2)^k exp(-s q / 2)] and
/// -2 rho'(0) = lambda2 of the restriction.
class RadialProfile {
 public:
  explicit RadialProfile(CovarianceModel1D restriction) : model_(std::move(restriction)) {
    require(model_.mixing() != nullptr, ErrorCode::InvalidModel,
            model_.name() + " is not a valid isotropic profile in dimension 2");
  }

  static RadialProfile gaussian_exp(double length_scale = 1.0) {
    return RadialProfile(CovarianceModel1D::gaussian_exp(length_scale));
  }
  static RadialProfile cauchy(double alpha, double length_scale = 1.0) {
    return RadialProfile(CovarianceModel1D::cauchy(alpha, length_scale));
  }
  static RadialProfile matern(double nu, double length_scale = 1.0) {
    return RadialProfile(CovarianceModel1D::matern_like(nu, length_scale));
  }

  [[nodiscard]] const CovarianceModel1D& restriction() const { return model_; }
  /// -2 rho'(0): variance of each gradient component.
  [[nodiscard]] double gradient_variance() const { return model_.lambda2(); }
  /// Whether rho^(k)(q) is available in any scalar type (closed form).
  [[nodiscard]] bool closed_form() const {
    return model_.kind() == ModelKind::GaussianExp || model_.kind() == ModelKind::Cauchy;
  }

  /// rho^(k)(q) for k = 0..order (entries above `order` are zero).
  template <class S>
  std::array<S, 5> derivs(S q, int order = 4) const {
    using std::exp;
    using std::pow;
    std::array<S, 5> out;
    out.fill(S(0));
    const MixingLaw& law = *model_.mixing();
    switch (law.family()) {
      case MixingLaw::Family::PointMass: {
        const S s = S(law.atom());
        const S e = exp(-s * q / 2);
        S f = S(1);
        for (int k = 0; k <= order; ++k) {
          out[k] = f * e;
          f *= -s / 2;
        }
        return out;
      }
      case MixingLaw::Family::Gamma: {
        // (1 + c q)^-alpha, c = 1 / (2 alpha l^2)
        const S alpha = S(model_.param1());
        const S c = S(1) / (S(2) * alpha * S(model_.param2()) * S(model_.param2()));
        const S base = S(1) + c * q;
        S coef = S(1);
        for (int k = 0; k <= order; ++k) {
          out[k] = coef * pow(base, -alpha - S(k));
          coef *= -(alpha + S(k)) * c;
        }
        return out;
      }
      default: {
        const auto d = mixture_derivs(static_cast<double>(q), order);
        for (int k = 0; k <= order; ++k) out[k] = S(d[k]);
        return out;
      }
    }
  }

  /// Derivative table of K(h) = rho(|h|^2) at h = (h1, h2), by composing
  /// the Taylor series of rho with |h + delta|^2.
  template <class S>
  DerivTable<S> kernel_derivs(S h1, S h2, int order = 4) const {
    const S q0 = h1 * h1 + h2 * h2;
    const auto rd = derivs<S>(q0, order);
    auto w = detail::poly_zero<S>();
    w[1][0] = S(2) * h1;
    w[0][1] = S(2) * h2;
    w[2][0] = S(1);
    w[0][2] = S(1);
    auto acc = detail::poly_zero<S>();
    auto wk = detail::poly_zero<S>();
    wk[0][0] = S(1);
    for (int k = 0; k <= order; ++k) {
      const S c = rd[k] / S(detail::factorial(k));
      for (int i = 0; i <= 4; ++i)
        for (int j = 0; i + j <= 4; ++j) acc[i][j] += c * wk[i][j];
      wk = detail::poly_mul(wk, w);
    }
    DerivTable<S> out;
    for (auto& row : out) row.fill(S(0));
    for (int i = 0; i <= order; ++i)
      for (int j = 0; i + j <= order; ++j)
        out[i][j] = acc[i][j] * S(detail::factorial(i) * detail::factorial(j));
    return out;
  }

 private:
  // E[(-s/2)^k exp(-s q/2)] by quadrature in y = ln s.
  [[nodiscard]] std::array<double, 5> mixture_derivs(double q, int order) const {
    const MixingLaw& law = *model_.mixing();
    std::array<double, 5> out{};
    if (q == 0.0) {
      for (int k = 0; k <= order; ++k) {
        const MomentValue m = law.moment(k);
        if (m.infinite)
          fail(ErrorCode::NonSmooth, model_.name() + " profile has no derivative of order " +
                                         std::to_string(k) + " at 0");
        out[k] = std::pow(-0.5, k) * m.value;
      }
      return out;
    }
    const double y_lo = law.y_lower();
    const double y_hi = std::max(y_lo + 1.0, std::log(2.0 * (80.0 + 4.0 * order) / q));
    const int panels = static_cast<int>(std::ceil((y_hi - y_lo) / law.panel_width()));
    for (int k = 0; k <= order; ++k) {
      out[k] = numeric::integrate_panels(
          [&](double y) {
            const double s = std::exp(y);
            return std::pow(-0.5 * s, k) * std::exp(-0.5 * s * q) * law.density_y(y);
          },
          y_lo, y_hi, panels);
    }
    return out;
  }

  CovarianceModel1D model_;
};

/// d independent coordinates X_i on R^d, Cov(X_i(s), X_i(t)) = rho_i(|s-t|^2).
struct IsotropicFieldModel {
  std::vector<RadialProfile> coords;

  [[nodiscard]] int dim() const { return static_cast<int>(coords.size()); }

  static IsotropicFieldModel uniform(int d, const RadialProfile& p) {
    return IsotropicFieldModel{std::vector<RadialProfile>(static_cast<std::size_t>(d), p)};
  }
};

/// Sum of plane waves: K(h) = sum_k a_k^2 cos(<w_k, h>) with sum a_k^2 = 1.
/// A finite-dimensional, degenerate stationary field on R^2.
struct PlaneWaveKernel {
  std::vector<double> weights;                 // a_k^2
  std::vector<std::array<double, 2>> waves;    // w_k

  static PlaneWaveKernel two_waves(double angle1 = 0.3, double angle2 = 1.9, double freq = 1.0) {
    return {{0.5, 0.5},
            {{freq * std::cos(angle1), freq * std::sin(angle1)},
             {freq * std::cos(angle2), freq * std::sin(angle2)}}};
  }

  template <class S>
  DerivTable<S> kernel_derivs(S h1, S h2, int order = 4) const {
    using std::cos;
    using std::pow;
    using std::sin;
    DerivTable<S> out;
    for (auto& row : out) row.fill(S(0));
    for (std::size_t k = 0; k < waves.size(); ++k) {
      const S w1 = S(waves[k][0]), w2 = S(waves[k][1]);
      const S ph = w1 * h1 + w2 * h2;
      const S c = cos(ph), s = sin(ph);
      const S cyc[4] = {c, -s, -c, s};  // d^n/dx^n cos x
      for (int i = 0; i <= order; ++i)
        for (int j = 0; i + j <= order; ++j)
          out[i][j] += S(weights[k]) * pow(w1, i) * pow(w2, j) * cyc[(i + j) % 4];
    }
    return out;
  }
};

/// A derivative of a scalar field at a point: d1^a d2^b X(points[point]).
struct Observable {
  int point = 0;
  int a = 0;
  int b = 0;
};

/// Joint covariance of observables of a stationary scalar field on R^2:
/// Cov(d^alpha X(p), d^beta X(q)) = (-1)^{|beta|} d^{alpha+beta} K(p - q).
template <class S, class Kernel>
Mat<S> joint_covariance(const Kernel& kernel, const std::vector<std::array<S, 2>>& points,
                        const std::vector<Observable>& obs) {
  const int n = static_cast<int>(obs.size());
  int order = 0;
  for (const auto& o : obs) order = std::max(order, o.a + o.b);
  order = std::min(4, 2 * order);
  const std::size_t np = points.size();
  std::vector<DerivTable<S>> tables(np * np);
  for (std::size_t p = 0; p < np; ++p)
    for (std::size_t q = 0; q < np; ++q)
      tables[p * np + q] =
          kernel.template kernel_derivs<S>(points[p][0] - points[q][0], points[p][1] - points[q][1], order);
  Mat<S> cov(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      const auto& t = tables[static_cast<std::size_t>(obs[r].point) * np + static_cast<std::size_t>(obs[c].point)];
      const S v = t[obs[r].a + obs[c].a][obs[r].b + obs[c].b];
      cov(r, c) = ((obs[c].a + obs[c].b) % 2 == 0) ? v : S(-v);
    }
  return cov;
}

}  // namespace crossmoments
