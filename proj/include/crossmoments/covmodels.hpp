#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include <boost/math/special_functions/bessel.hpp>

#include "crossmoments/error.hpp"
#include "crossmoments/mixture.hpp"
#include "crossmoments/numeric.hpp"
#include "crossmoments/rng.hpp"
#include "crossmoments/spectral.hpp"

namespace crossmoments {

enum class ModelKind { GaussianExp, SineCosine, MaternLike, Cauchy, LogTail, SpectralTable };

constexpr std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::GaussianExp: return "GaussianExp";
    case ModelKind::SineCosine: return "SineCosine";
    case ModelKind::MaternLike: return "MaternLike";
    case ModelKind::Cauchy: return "Cauchy";
    case ModelKind::LogTail: return "LogTail";
    case ModelKind::SpectralTable: return "SpectralTable";
  }
  return "Unknown";
}

/// r(tau), r'(tau), r''(tau).
struct CovDerivs {
  double r = 1.0;
  double dr = 0.0;
  double d2r = 0.0;
};

/// Stationary unit-variance covariance of a 1D Gaussian process.
///
///   GaussianExp(l)        r = exp(-tau^2 / (2 l^2))
///   SineCosine(w)         r = cos(w tau)
///   MaternLike(nu, l)     spectral density ~ (1 + (l lambda)^2)^(-nu-1/2), nu > 1
///   Cauchy(alpha, l)      r = (1 + tau^2 / (2 alpha l^2))^-alpha
///   LogTail(beta, l)      scale mixture with lambda4 = inf; Geman fails iff beta <= 2
///   SpectralTable         tabulated even spectral density
///
/// All kinds except SineCosine and SpectralTable are Gaussian scale mixtures
/// and share one evaluation path.
class CovarianceModel1D {
 public:
  static CovarianceModel1D gaussian_exp(double length_scale = 1.0) {
    require(length_scale > 0.0 && std::isfinite(length_scale), ErrorCode::InvalidModel,
            "length scale must be positive");
    CovarianceModel1D m(ModelKind::GaussianExp);
    m.p1_ = length_scale;
    m.law_ = std::make_shared<MixingLaw>(MixingLaw::point_mass(1.0 / (length_scale * length_scale)));
    m.finish_mixture();
    return m;
  }

  static CovarianceModel1D sine_cosine(double w) {
    require(w > 0.0 && std::isfinite(w), ErrorCode::InvalidModel, "angular frequency must be positive");
    CovarianceModel1D m(ModelKind::SineCosine);
    m.p1_ = w;
    m.lambda2_ = w * w;
    m.lambda4_ = MomentValue::finite(w * w * w * w);
    return m;
  }

  static CovarianceModel1D matern_like(double nu, double length_scale = 1.0) {
    require(nu > 1.0, ErrorCode::InvalidModel, "MaternLike needs nu > 1 (finite lambda2)");
    require(length_scale > 0.0, ErrorCode::InvalidModel, "length scale must be positive");
    CovarianceModel1D m(ModelKind::MaternLike);
    m.p1_ = nu;
    m.p2_ = length_scale;
    m.law_ = std::make_shared<MixingLaw>(
        MixingLaw::inverse_gamma(nu, 0.5 / (length_scale * length_scale)));
    m.finish_mixture();
    return m;
  }

  static CovarianceModel1D cauchy(double alpha, double length_scale = 1.0) {
    require(alpha > 0.0 && length_scale > 0.0, ErrorCode::InvalidModel, "Cauchy needs alpha, l > 0");
    CovarianceModel1D m(ModelKind::Cauchy);
    m.p1_ = alpha;
    m.p2_ = length_scale;
    m.law_ = std::make_shared<MixingLaw>(MixingLaw::gamma(alpha, alpha * length_scale * length_scale));
    m.finish_mixture();
    return m;
  }

  static CovarianceModel1D log_tail(double beta = 1.5, double length_scale = 1.0) {
    CovarianceModel1D m(ModelKind::LogTail);
    m.p1_ = beta;
    m.p2_ = length_scale;
    m.law_ = std::make_shared<MixingLaw>(MixingLaw::log_tail(beta, length_scale));
    m.finish_mixture();
    return m;
  }

  static CovarianceModel1D spectral_table(SpectralDensity density) {
    CovarianceModel1D m(ModelKind::SpectralTable);
    m.table_ = std::make_shared<SpectralDensity>(std::move(density));
    m.lambda2_ = m.table_->moment(2).value;
    require(m.lambda2_ > 0.0, ErrorCode::InvalidModel, "spectral table has lambda2 = 0");
    try {
      m.lambda4_ = m.table_->moment(4);
    } catch (const Error&) {
      m.lambda4_inconclusive_ = true;
      m.lambda4_ = MomentValue::unbounded();
    }
    return m;
  }

  [[nodiscard]] ModelKind kind() const { return kind_; }
  [[nodiscard]] std::string name() const { return std::string(to_string(kind_)); }

  /// Kind-specific parameters: GaussianExp (l), SineCosine (w), MaternLike (nu, l),
  /// Cauchy (alpha, l), LogTail (beta, l).
  [[nodiscard]] double param1() const { return p1_; }
  [[nodiscard]] double param2() const { return p2_; }
  [[nodiscard]] const MixingLaw* mixing() const { return law_.get(); }
  [[nodiscard]] const SpectralDensity* spectrum() const { return table_.get(); }

  [[nodiscard]] double lambda2() const { return lambda2_; }
  [[nodiscard]] MomentValue lambda4() const { return lambda4_; }

  /// lambda_k for k in {0, 2, 4, 6}.
  [[nodiscard]] MomentValue spectral_moment(int k) const {
    require(k >= 0 && k % 2 == 0, ErrorCode::InvalidConfig, "spectral moment order must be even");
    if (k == 0) return MomentValue::finite(1.0);
    switch (kind_) {
      case ModelKind::SineCosine: return MomentValue::finite(std::pow(p1_, k));
      case ModelKind::SpectralTable: return table_->moment(k);
      default: {
        // Gaussian scale mixture: lambda_{2j} = (2j-1)!! E[s^j].
        const int j = k / 2;
        const MomentValue e = law_->moment(j);
        if (e.infinite) return e;
        double dfact = 1.0;
        for (int i = 2 * j - 1; i > 1; i -= 2) dfact *= i;
        return MomentValue::finite(dfact * e.value);
      }
    }
  }

  /// Positive-kernel pieces at lag tau (see LagTerms).
  [[nodiscard]] LagTerms terms(double tau) const {
    tau = std::abs(tau);
    switch (kind_) {
      case ModelKind::SineCosine: {
        const double w = p1_;
        const double x = w * tau;
        return {numeric::one_minus_cos(x), w * std::sin(x), w * w * numeric::one_minus_cos(x),
                numeric::spectral_c_kernel(x), w * numeric::x_minus_sin(x)};
      }
      case ModelKind::SpectralTable: return table_->terms(tau);
      default: return mixture_terms(*law_, tau);
    }
  }

  /// (r, r', r'') at tau >= 0 (r' is odd, so negative tau flips its sign).
  [[nodiscard]] CovDerivs eval(double tau) const {
    const double sgn = tau < 0.0 ? -1.0 : 1.0;
    tau = std::abs(tau);
    if (tau == 0.0) return {1.0, 0.0, -lambda2_};
    switch (kind_) {
      case ModelKind::GaussianExp: {
        const double l2 = p1_ * p1_;
        const double r = std::exp(-0.5 * tau * tau / l2);
        return {r, -sgn * tau / l2 * r, (tau * tau / l2 - 1.0) / l2 * r};
      }
      case ModelKind::SineCosine: {
        const double w = p1_;
        return {std::cos(w * tau), -sgn * w * std::sin(w * tau), -w * w * std::cos(w * tau)};
      }
      case ModelKind::Cauchy: {
        const double a = p1_, c = 1.0 / (2.0 * a * p2_ * p2_);
        const double base = 1.0 + c * tau * tau;
        const double r = std::pow(base, -a);
        const double dr = -2.0 * a * c * tau * r / base;
        const double d2r = -2.0 * a * c * r / base + 4.0 * a * (a + 1.0) * c * c * tau * tau * r / (base * base);
        return {r, sgn * dr, d2r};
      }
      default: {
        const LagTerms t = terms(tau);
        return {1.0 - t.A, -sgn * t.B, t.D - lambda2_};
      }
    }
  }

  /// r(tau) alone (used to fill sampling embeddings).
  [[nodiscard]] double cov(double tau) const {
    tau = std::abs(tau);
    switch (kind_) {
      case ModelKind::GaussianExp:
      case ModelKind::SineCosine:
      case ModelKind::Cauchy: return eval(tau).r;
      case ModelKind::MaternLike: return matern_closed_form(tau);
      default: return 1.0 - terms(tau).A;
    }
  }

  /// Closed Bessel form 2^{1-nu}/Gamma(nu) x^nu K_nu(x), x = tau / l.
  [[nodiscard]] double matern_closed_form(double tau) const {
    const double x = std::abs(tau) / p2_;
    if (x == 0.0) return 1.0;
    if (x > 700.0) return 0.0;
    return std::exp((1.0 - p1_) * std::log(2.0) - std::lgamma(p1_) + p1_ * std::log(x)) *
           boost::math::cyl_bessel_k(p1_, x);
  }

  /// Smallest tau > 0 with 1 - r(tau)^2 = 0, or +inf.
  [[nodiscard]] double first_degenerate_lag() const {
    return kind_ == ModelKind::SineCosine ? kPi / p1_ : kInf;
  }

  /// True when lambda4 could not be decided from a fitted spectral tail.
  [[nodiscard]] bool lambda4_inconclusive() const { return lambda4_inconclusive_; }

  /// Draw a frequency from the normalized spectral measure.
  double sample_frequency(RandomStream& rng) const {
    switch (kind_) {
      case ModelKind::SineCosine: return rng.uniform() < 0.5 ? -p1_ : p1_;
      case ModelKind::SpectralTable: return table_->sample_frequency(rng);
      default: return std::sqrt(law_->sample(rng)) * rng.normal();
    }
  }

 private:
  explicit CovarianceModel1D(ModelKind k) : kind_(k) {}

  void finish_mixture() {
    lambda2_ = law_->moment(1).value;
    lambda4_ = spectral_moment(4);
  }

  ModelKind kind_;
  double p1_ = 0.0;
  double p2_ = 1.0;
  double lambda2_ = 1.0;
  MomentValue lambda4_{};
  bool lambda4_inconclusive_ = false;
  std::shared_ptr<const MixingLaw> law_;
  std::shared_ptr<const SpectralDensity> table_;
};

/// Conditional variance of X'(0) given X(0), X(tau):
///   sigma^2 = lambda2 - r'^2 / (1 - r^2),
/// evaluated as (2 lambda2 C - Bt^2 - lambda2 A^2) / (A (2 - A)) so that the
/// small-lag limit keeps full relative precision.
inline double sigma2(const CovarianceModel1D& model, double tau) {
  tau = std::abs(tau);
  require(tau > 0.0, ErrorCode::DegenerateLag, "sigma2 needs tau > 0");
  const LagTerms t = model.terms(tau);
  const double det = t.A * (2.0 - t.A);
  if (!(det > 1e-14 * std::min(1.0, model.lambda2() * tau * tau)))
    fail(ErrorCode::DegenerateLag, "1 - r^2 vanishes at tau = " + std::to_string(tau));
  if (model.kind() == ModelKind::SineCosine) return 0.0;
  const double l2 = model.lambda2();
  const double num = 2.0 * l2 * t.C - t.Bt * t.Bt - l2 * t.A * t.A;
  return std::clamp(num / det, 0.0, l2);
}

/// Both Geman integrands at tau: (sigma^2 / tau, (lambda2 + r'') / tau).
struct GemanIntegrands {
  double sigma_form = 0.0;
  double spectral_form = 0.0;
};

inline GemanIntegrands geman_integrands(const CovarianceModel1D& model, double tau) {
  require(tau > 0.0, ErrorCode::DegenerateLag, "Geman integrands need tau > 0");
  return {sigma2(model, tau) / tau, model.terms(tau).D / tau};
}

}  // namespace crossmoments
