#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "crossmoments/error.hpp"
#include "crossmoments/numeric.hpp"
#include "crossmoments/rng.hpp"

namespace crossmoments {

/// Law of the frequency variance s in a Gaussian scale mixture
/// r(tau) = E[exp(-s tau^2 / 2)]. Every such r is a valid isotropic
/// covariance in any dimension, and all the small-lag quantities become
/// integrals of positive kernels against this law.
///
/// Densities are expressed in y = ln s so heavy tails stay integrable by
/// ordinary panel quadrature; tails beyond the numerical range are supplied
/// analytically through tail_mass / tail_mean.
class MixingLaw {
 public:
  enum class Family { PointMass, InverseGamma, Gamma, LogTail };

  static MixingLaw point_mass(double s0) {
    require(s0 > 0.0 && std::isfinite(s0), ErrorCode::InvalidModel, "point mass must be positive");
    MixingLaw law(Family::PointMass);
    law.a_ = s0;
    return law;
  }

  /// s ~ InvGamma(shape, scale): density scale^shape / Gamma(shape) s^{-shape-1} e^{-scale/s}.
  static MixingLaw inverse_gamma(double shape, double scale) {
    require(shape > 1.0, ErrorCode::InvalidModel, "inverse-gamma mixing needs shape > 1 for finite lambda2");
    require(scale > 0.0, ErrorCode::InvalidModel, "inverse-gamma scale must be positive");
    MixingLaw law(Family::InverseGamma);
    law.a_ = shape;
    law.b_ = scale;
    law.log_norm_ = shape * std::log(scale) - std::lgamma(shape);
    return law;
  }

  /// s ~ Gamma(shape, rate).
  static MixingLaw gamma(double shape, double rate) {
    require(shape > 0.0 && rate > 0.0, ErrorCode::InvalidModel, "gamma mixing needs shape, rate > 0");
    MixingLaw law(Family::Gamma);
    law.a_ = shape;
    law.b_ = rate;
    law.log_norm_ = shape * std::log(rate) - std::lgamma(shape);
    return law;
  }

  /// s = s_b / l^2 with s_b density c s^-2 e^{-1/(2s)} (ln(e+s))^-beta.
  /// lambda2 finite iff beta > 1; lambda4 always infinite.
  static MixingLaw log_tail(double beta, double length_scale) {
    require(beta > 1.0, ErrorCode::InvalidModel, "log-tail mixing needs beta > 1 for finite lambda2");
    require(length_scale > 0.0, ErrorCode::InvalidModel, "length scale must be positive");
    MixingLaw law(Family::LogTail);
    law.a_ = beta;
    law.shift_ = 2.0 * std::log(length_scale);
    law.scale_ = 1.0 / (length_scale * length_scale);
    law.log_norm_ = 0.0;
    const double mass = numeric::integrate_panels(
        [&](double y) { return law.log_tail_unnormalized(y); }, -8.0, 80.0, 176);
    law.log_norm_ = -std::log(mass);
    law.build_log_tail_cdf();
    return law;
  }

  [[nodiscard]] Family family() const { return family_; }
  [[nodiscard]] bool is_point_mass() const { return family_ == Family::PointMass; }
  [[nodiscard]] double atom() const { return a_; }
  [[nodiscard]] double shape() const { return a_; }

  /// Density of y = ln s.
  [[nodiscard]] double density_y(double y) const {
    switch (family_) {
      case Family::PointMass: return 0.0;
      case Family::InverseGamma: return std::exp(log_norm_ - a_ * y - b_ * std::exp(-y));
      case Family::Gamma: return std::exp(log_norm_ + a_ * y - b_ * std::exp(y));
      case Family::LogTail: return std::exp(log_norm_) * log_tail_unnormalized(y + shift_);
    }
    return 0.0;
  }

  /// P(ln s > y).
  [[nodiscard]] double tail_mass(double y) const {
    switch (family_) {
      case Family::PointMass: return std::log(a_) > y ? 1.0 : 0.0;
      case Family::InverseGamma: return boost::math::gamma_p(a_, b_ * std::exp(-y));
      case Family::Gamma: return boost::math::gamma_q(a_, b_ * std::exp(y));
      case Family::LogTail: {
        const double yb = std::max(y + shift_, -8.0);
        const double hi = yb + 70.0;
        const int panels = static_cast<int>(std::ceil(hi - yb));
        return std::exp(log_norm_) *
               numeric::integrate_panels([&](double t) { return log_tail_unnormalized(t); }, yb, hi,
                                         panels);
      }
    }
    return 0.0;
  }

  /// E[s ; ln s > y].
  [[nodiscard]] double tail_mean(double y) const {
    switch (family_) {
      case Family::PointMass: return std::log(a_) > y ? a_ : 0.0;
      case Family::InverseGamma:
        return b_ / (a_ - 1.0) * boost::math::gamma_p(a_ - 1.0, b_ * std::exp(-y));
      case Family::Gamma: return a_ / b_ * boost::math::gamma_q(a_ + 1.0, b_ * std::exp(y));
      case Family::LogTail: return scale_ * log_tail_upper_mean(y + shift_);
    }
    return 0.0;
  }

  /// E[s^k].
  [[nodiscard]] MomentValue moment(int k) const {
    switch (family_) {
      case Family::PointMass: return MomentValue::finite(std::pow(a_, k));
      case Family::InverseGamma:
        if (a_ <= k) return MomentValue::unbounded();
        return MomentValue::finite(std::exp(k * std::log(b_) + std::lgamma(a_ - k) - std::lgamma(a_)));
      case Family::Gamma:
        return MomentValue::finite(std::exp(std::lgamma(a_ + k) - std::lgamma(a_) - k * std::log(b_)));
      case Family::LogTail:
        if (k == 0) return MomentValue::finite(1.0);
        if (k == 1) return MomentValue::finite(tail_mean(-1e300));
        return MomentValue::unbounded();
    }
    return MomentValue::unbounded();
  }

  /// Below this y the law carries negligible mass for every kernel used.
  [[nodiscard]] double y_lower() const {
    switch (family_) {
      case Family::PointMass: return std::log(a_);
      case Family::InverseGamma: return std::log(b_) - std::log(a_ + 80.0);
      case Family::Gamma: return std::log(a_ / b_) - 50.0 / a_;
      case Family::LogTail: return -8.0 - shift_;
    }
    return 0.0;
  }

  /// Above this y the remaining mass is below 1e-18 (used for sampling tables).
  [[nodiscard]] double y_upper_mass() const {
    switch (family_) {
      case Family::PointMass: return std::log(a_);
      case Family::InverseGamma: return std::log(b_) + 45.0 / (a_ - 0.0) + 2.0;
      case Family::Gamma: return std::log((a_ + 60.0 + 8.0 * std::sqrt(a_)) / b_);
      case Family::LogTail: return 45.0 - shift_;
    }
    return 0.0;
  }

  /// Draw s from the law.
  double sample(RandomStream& rng) const {
    const double u = rng.uniform();
    switch (family_) {
      case Family::PointMass: return a_;
      case Family::InverseGamma: return b_ / boost::math::gamma_p_inv(a_, u);
      case Family::Gamma: return boost::math::gamma_p_inv(a_, u) / b_;
      case Family::LogTail: {
        const auto& cdf = *cdf_;
        if (u >= cdf.back()) {
          // Beyond the table the law is ~ s^-1 (ln s)^-beta ds / s; the
          // remaining mass is < 1e-12 for every beta > 1 used here.
          return std::exp(kCdfHi) * scale_;
        }
        const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
        const std::size_t k = static_cast<std::size_t>(it - cdf.begin());
        if (k == 0) return std::exp(kCdfLo) * scale_;
        const double w = (u - cdf[k - 1]) / (cdf[k] - cdf[k - 1]);
        const double yb = kCdfLo + (static_cast<double>(k - 1) + w) * kCdfStep;
        return std::exp(yb) * scale_;
      }
    }
    return a_;
  }

  /// Quadrature panel width in y; narrow laws need narrower panels.
  [[nodiscard]] double panel_width() const {
    switch (family_) {
      case Family::InverseGamma:
      case Family::Gamma: return std::min(0.5, 1.0 / std::sqrt(a_));
      default: return 0.5;
    }
  }

 private:
  explicit MixingLaw(Family f) : family_(f) {}

  static double log_tail_L(double y) {
    return y > 30.0 ? y + std::log1p(std::exp(1.0 - y)) : std::log(std::exp(1.0) + std::exp(y));
  }

  // Base-units density of y_b without normalization.
  [[nodiscard]] double log_tail_unnormalized(double y) const {
    if (y < -40.0) return 0.0;
    return std::exp(-y - 0.5 * std::exp(-y)) * std::pow(log_tail_L(y), -a_);
  }

  static constexpr double kCdfLo = -8.0;
  static constexpr double kCdfHi = 80.0;
  static constexpr double kCdfStep = 0.05;

  void build_log_tail_cdf() {
    auto cdf = std::make_shared<std::vector<double>>();
    const int steps = static_cast<int>(std::lround((kCdfHi - kCdfLo) / kCdfStep));
    cdf->reserve(steps + 1);
    double acc = 0.0;
    cdf->push_back(0.0);
    const double norm = std::exp(log_norm_);
    for (int k = 0; k < steps; ++k) {
      const double lo = kCdfLo + k * kCdfStep;
      acc += norm * boost::math::quadrature::gauss<double, 20>::integrate(
                        [&](double t) { return log_tail_unnormalized(t); }, lo, lo + kCdfStep);
      cdf->push_back(acc);
    }
    cdf_ = std::move(cdf);
  }

  // E[s_b ; y_b > y] in base units.
  [[nodiscard]] double log_tail_upper_mean(double y) const {
    constexpr double kAsymptotic = 60.0;
    const double lo = std::max(y, -8.0);
    double total = 0.0;
    if (lo < kAsymptotic) {
      const int panels = static_cast<int>(std::ceil((kAsymptotic - lo) / 0.5));
      total += numeric::integrate_panels(
          [&](double t) { return std::exp(-0.5 * std::exp(-t)) * std::pow(log_tail_L(t), -a_); }, lo,
          kAsymptotic, panels);
    }
    // Beyond 60: e^{-e^{-y}/2} = 1 and L(y) = y to ~1e-26.
    const double start = std::max(lo, kAsymptotic);
    total += std::pow(start, 1.0 - a_) / (a_ - 1.0);
    return std::exp(log_norm_) * total;
  }

  Family family_;
  double a_ = 0.0;         // atom / shape / beta
  double b_ = 0.0;         // scale / rate
  double shift_ = 0.0;     // log-tail: y_b = y + shift
  double scale_ = 1.0;     // log-tail: s = s_b * scale
  double log_norm_ = 0.0;
  std::shared_ptr<const std::vector<double>> cdf_;  // log-tail: CDF of y_b on a fixed grid
};

/// Positive-kernel pieces of a stationary covariance at lag tau:
///   A  = 1 - r(tau)
///   B  = -r'(tau)
///   D  = lambda2 + r''(tau)
///   C  = tau * Bt - (lambda2 tau^2 / 2 - A)
///   Bt = lambda2 tau - B
/// With these, lambda2 (1 - r^2) - r'^2 = 2 lambda2 C - Bt^2 - lambda2 A^2,
/// which has no small-tau cancellation.
struct LagTerms {
  double A = 0.0;
  double B = 0.0;
  double D = 0.0;
  double C = 0.0;
  double Bt = 0.0;
};

inline LagTerms point_mass_terms(double s, double tau) {
  const double x = 0.5 * s * tau * tau;
  const double em = std::exp(-x);
  const double a = numeric::one_minus_exp_neg(x);
  return {a, s * tau * em, s * (a + 2.0 * x * em), numeric::gauss_c_kernel(x), s * tau * a};
}

inline LagTerms mixture_terms(const MixingLaw& law, double tau) {
  if (law.is_point_mass()) return point_mass_terms(law.atom(), tau);
  tau = std::abs(tau);
  if (tau == 0.0) return {};
  const double half_t2 = 0.5 * tau * tau;
  const double y_lo = law.y_lower();
  // Past y_cut the kernels are at their large-x limits to ~e^{-50}.
  const double y_cut = std::max(y_lo, std::log(50.0 / half_t2));

  LagTerms t;
  const double width = law.panel_width();
  const int panels = std::max(1, static_cast<int>(std::ceil((y_cut - y_lo) / width)));
  const double h = (y_cut - y_lo) / panels;
  using Rule = boost::math::quadrature::gauss<double, 20>;
  const auto& nodes = Rule::abscissa();
  const auto& weights = Rule::weights();
  for (int p = 0; p < panels; ++p) {
    const double mid = y_lo + (p + 0.5) * h;
    const double half = 0.5 * h;
    auto accumulate = [&](double y, double w) {
      const double m = law.density_y(y) * w * half;
      if (m == 0.0) return;
      const double s = std::exp(y);
      const double x = s * half_t2;
      const double em = std::exp(-x);
      const double a = numeric::one_minus_exp_neg(x);
      t.A += a * m;
      t.B += s * tau * em * m;
      t.D += s * (a + 2.0 * x * em) * m;
      t.C += numeric::gauss_c_kernel(x) * m;
      t.Bt += s * tau * a * m;
    };
    // boost stores the non-negative half of a symmetric rule.
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (nodes[i] == 0.0) {
        accumulate(mid, weights[i]);
      } else {
        accumulate(mid + half * nodes[i], weights[i]);
        accumulate(mid - half * nodes[i], weights[i]);
      }
    }
  }
  const double mass = law.tail_mass(y_cut);
  const double mean = law.tail_mean(y_cut);
  t.A += mass;
  t.D += mean;
  t.C += half_t2 * mean + mass;
  t.Bt += tau * mean;
  return t;
}

}  // namespace crossmoments
