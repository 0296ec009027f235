#pragma once

#include <algorithm>
#include <cmath>
#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/ooura_fourier_integrals.hpp>

#include "crossmoments/error.hpp"
#include "crossmoments/mixture.hpp"
#include "crossmoments/numeric.hpp"
#include "crossmoments/rng.hpp"

namespace crossmoments {

/// Even spectral density f on R given on a grid of nonnegative frequencies.
/// Between grid points f is linear, on [0, freq[0]] it is constant, and past
/// the last point it follows C lambda^-p with p either given or fitted on the
/// last few points. Normalized so that 2 * int_0^inf f = 1.
class SpectralDensity {
 public:
  SpectralDensity(std::vector<double> freq, std::vector<double> values,
                  std::optional<double> tail_exponent = std::nullopt)
      : freq_(std::move(freq)), values_(std::move(values)) {
    require(freq_.size() >= 2 && freq_.size() == values_.size(), ErrorCode::InvalidModel,
            "spectral table needs >= 2 rows of (frequency, density)");
    for (std::size_t i = 0; i < freq_.size(); ++i) {
      require(std::isfinite(freq_[i]) && std::isfinite(values_[i]), ErrorCode::InvalidModel,
              "spectral table entries must be finite");
      require(values_[i] >= 0.0, ErrorCode::InvalidModel, "spectral density must be nonnegative");
      require(freq_[i] >= 0.0, ErrorCode::InvalidModel, "frequencies must be nonnegative");
      if (i > 0)
        require(freq_[i] > freq_[i - 1], ErrorCode::InvalidModel, "frequencies must increase strictly");
    }
    require(freq_.back() > 0.0, ErrorCode::InvalidModel, "last frequency must be positive");
    if (tail_exponent) {
      tail_p_ = *tail_exponent;
      tail_se_ = 0.0;
      tail_fitted_ = false;
    } else {
      fit_tail();
    }
    if (values_.back() > 0.0)
      require(tail_p_ > 3.0, ErrorCode::InvalidModel,
              "tail exponent must exceed 3 for a finite second spectral moment");
    raw_mass_ = raw_moment(0);
    require(raw_mass_ > 0.0, ErrorCode::InvalidModel, "spectral density has zero mass");
    for (double& v : values_) v /= raw_mass_;
    build_cdf();
  }

  /// Two-column CSV: frequency,density. Lines starting with '#' and a
  /// non-numeric header line are skipped.
  static SpectralDensity from_csv(std::istream& in, std::optional<double> tail_exponent = std::nullopt) {
    std::vector<double> f, v;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty() || line[0] == '#') continue;
      std::replace(line.begin(), line.end(), ',', ' ');
      std::istringstream ss(line);
      double a = 0.0, b = 0.0;
      if (!(ss >> a >> b)) {
        if (f.empty() && lineno == 1) continue;  // header
        fail(ErrorCode::InvalidModel, "spectral CSV: cannot parse line " + std::to_string(lineno));
      }
      f.push_back(a);
      v.push_back(b);
    }
    return SpectralDensity(std::move(f), std::move(v), tail_exponent);
  }

  [[nodiscard]] const std::vector<double>& frequencies() const { return freq_; }
  [[nodiscard]] const std::vector<double>& values() const { return values_; }
  [[nodiscard]] double tail_exponent() const { return tail_p_; }
  [[nodiscard]] double tail_exponent_se() const { return tail_se_; }
  [[nodiscard]] bool tail_fitted() const { return tail_fitted_; }
  /// 2 * int f before normalization.
  [[nodiscard]] double raw_mass() const { return raw_mass_; }

  [[nodiscard]] double density(double lambda) const {
    lambda = std::abs(lambda);
    if (lambda <= freq_.front()) return values_.front();
    if (lambda >= freq_.back()) return tail(lambda);
    const auto it = std::upper_bound(freq_.begin(), freq_.end(), lambda);
    const std::size_t j = static_cast<std::size_t>(it - freq_.begin());
    const double a = freq_[j - 1], b = freq_[j];
    const double w = (lambda - a) / (b - a);
    return values_[j - 1] * (1.0 - w) + values_[j] * w;
  }

  /// lambda_k = 2 int lambda^k f. Infinite when the tail makes it diverge;
  /// InconclusiveTail when a fitted exponent is within `sigmas` standard
  /// errors of the divergence threshold k+1.
  [[nodiscard]] MomentValue moment(int k, double sigmas = 2.0) const {
    if (values_.back() > 0.0 && tail_fitted_ && std::abs(tail_p_ - (k + 1)) < sigmas * tail_se_)
      fail(ErrorCode::InconclusiveTail, "fitted tail exponent " + std::to_string(tail_p_) + " +- " +
                                            std::to_string(tail_se_) + " cannot decide lambda_" +
                                            std::to_string(k));
    if (values_.back() > 0.0 && tail_p_ <= k + 1) return MomentValue::unbounded();
    return MomentValue::finite(raw_moment(k));
  }

  /// Positive-kernel lag terms (see LagTerms) by quadrature of the spectral
  /// representation. Past a cut-off the tail is integrated with Ooura's
  /// double-exponential Fourier rules after shifting to a full period.
  [[nodiscard]] LagTerms terms(double tau) const {
    tau = std::abs(tau);
    LagTerms t;
    if (tau == 0.0) return t;
    auto add_piece = [&](double a, double b, auto&& f, int panels) {
      using Rule = boost::math::quadrature::gauss<double, 20>;
      const auto& nodes = Rule::abscissa();
      const auto& weights = Rule::weights();
      const double h = (b - a) / panels;
      for (int p = 0; p < panels; ++p) {
        const double mid = a + (p + 0.5) * h;
        const double half = 0.5 * h;
        auto acc = [&](double lam, double w) {
          const double m = 2.0 * f(lam) * w * half;
          const double x = lam * tau;
          t.A += numeric::one_minus_cos(x) * m;
          t.B += lam * std::sin(x) * m;
          t.D += lam * lam * numeric::one_minus_cos(x) * m;
          t.C += numeric::spectral_c_kernel(x) * m;
          t.Bt += lam * numeric::x_minus_sin(x) * m;
        };
        for (std::size_t i = 0; i < nodes.size(); ++i) {
          if (nodes[i] == 0.0) {
            acc(mid, weights[i]);
          } else {
            acc(mid + half * nodes[i], weights[i]);
            acc(mid - half * nodes[i], weights[i]);
          }
        }
      }
    };
    auto panels_for = [&](double a, double b) {
      return std::max(1, static_cast<int>(std::ceil((b - a) * tau / kPi)));
    };

    if (freq_.front() > 0.0) {
      const double f0 = values_.front();
      add_piece(0.0, freq_.front(), [f0](double) { return f0; }, panels_for(0.0, freq_.front()));
    }
    for (std::size_t j = 0; j + 1 < freq_.size(); ++j) {
      const double a = freq_[j], b = freq_[j + 1], fa = values_[j], fb = values_[j + 1];
      add_piece(a, b, [=](double lam) { return fa + (fb - fa) * (lam - a) / (b - a); }, panels_for(a, b));
    }
    if (values_.back() == 0.0) return t;

    const double lam_n = freq_.back();
    const double periods = std::ceil(std::max(lam_n * tau, 64.0 * kPi) / (2.0 * kPi));
    const double cut = 2.0 * kPi * periods / tau;
    for (double a = lam_n; a < cut;) {
      const double b = std::min(cut, a + std::min(a, kPi / tau));
      add_piece(a, b, [this](double lam) { return tail(lam); }, 1);
      a = b;
    }

    const double p = tail_p_;
    const double F = values_.back() * std::pow(lam_n, p);
    const double I0 = F * std::pow(cut, 1.0 - p) / (p - 1.0);
    const double I2 = F * std::pow(cut, 3.0 - p) / (p - 3.0);
    auto& sin_rule = sin_integrator();
    auto& cos_rule = cos_integrator();
    const double cc0 = cos_rule.integrate([&](double s) { return F * std::pow(cut + s, -p); }, tau).first;
    const double ss1 = sin_rule.integrate([&](double s) { return F * std::pow(cut + s, 1.0 - p); }, tau).first;
    const double cc2 = cos_rule.integrate([&](double s) { return F * std::pow(cut + s, 2.0 - p); }, tau).first;
    t.A += 2.0 * (I0 - cc0);
    t.B += 2.0 * ss1;
    t.D += 2.0 * (I2 - cc2);
    t.C += 2.0 * (0.5 * tau * tau * I2 + I0 - tau * ss1 - cc0);
    t.Bt += 2.0 * (tau * I2 - ss1);
    return t;
  }

  /// Draw |lambda| from the normalized spectral measure, random sign.
  double sample_frequency(RandomStream& rng) const {
    const double u = rng.uniform();
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    double lam;
    if (u >= cdf_.back()) {
      // Pareto-type tail: P(L > x | tail) = (x / lam_n)^{1-p}
      const double v = (u - cdf_.back()) / (1.0 - cdf_.back());
      lam = freq_.back() * std::pow(1.0 - v, 1.0 / (1.0 - tail_p_));
    } else {
      const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
      const std::size_t j = static_cast<std::size_t>(it - cdf_.begin());
      const double lo = cdf_knots_[j - 1], hi = cdf_knots_[j];
      // Linear density within a piece: solve the quadratic CDF by bisection.
      double a = lo, b = hi;
      for (int it2 = 0; it2 < 60; ++it2) {
        const double m = 0.5 * (a + b);
        const double c = cdf_[j - 1] + piece_mass(lo, m);
        (c < u ? a : b) = m;
      }
      lam = 0.5 * (a + b);
    }
    return sign * lam;
  }

 private:
  [[nodiscard]] double tail(double lambda) const {
    return values_.back() * std::pow(lambda / freq_.back(), -tail_p_);
  }

  void fit_tail() {
    const std::size_t n = freq_.size();
    std::vector<double> lx, ly;
    for (std::size_t i = n >= 6 ? n - 6 : 0; i < n; ++i) {
      if (freq_[i] > 0.0 && values_[i] > 0.0) {
        lx.push_back(std::log(freq_[i]));
        ly.push_back(std::log(values_[i]));
      }
    }
    if (values_.back() == 0.0) {
      tail_p_ = kInf;
      tail_fitted_ = false;
      return;
    }
    require(lx.size() >= 3, ErrorCode::InvalidModel, "need >= 3 positive tail points to fit the exponent");
    const auto fit = numeric::fit_line(lx, ly);
    tail_p_ = -fit.slope;
    tail_se_ = fit.slope_se;
    tail_fitted_ = true;
  }

  // 2 int lambda^k f over the unnormalized representation.
  [[nodiscard]] double raw_moment(int k) const {
    double total = 0.0;
    const double a0 = freq_.front();
    total += values_.front() * std::pow(a0, k + 1) / (k + 1);
    for (std::size_t j = 0; j + 1 < freq_.size(); ++j) {
      const double a = freq_[j], b = freq_[j + 1];
      const double c1 = (values_[j + 1] - values_[j]) / (b - a);
      const double c0 = values_[j] - c1 * a;
      total += c0 * (std::pow(b, k + 1) - std::pow(a, k + 1)) / (k + 1) +
               c1 * (std::pow(b, k + 2) - std::pow(a, k + 2)) / (k + 2);
    }
    if (values_.back() > 0.0) {
      const double lam_n = freq_.back();
      total += values_.back() * std::pow(lam_n, k + 1) / (tail_p_ - k - 1);
    }
    return 2.0 * total;
  }

  // Half-line mass of the normalized density between lo < hi inside one piece.
  [[nodiscard]] double piece_mass(double lo, double hi) const {
    return 2.0 * 0.5 * (density(lo) + density(hi)) * (hi - lo);
  }

  void build_cdf() {
    cdf_knots_.push_back(0.0);
    cdf_.push_back(0.0);
    for (double f : freq_) {
      if (f == 0.0) continue;
      cdf_.push_back(cdf_.back() + piece_mass(cdf_knots_.back(), f));
      cdf_knots_.push_back(f);
    }
  }

  static boost::math::quadrature::ooura_fourier_sin<double>& sin_integrator() {
    thread_local boost::math::quadrature::ooura_fourier_sin<double> rule(1e-10);
    return rule;
  }
  static boost::math::quadrature::ooura_fourier_cos<double>& cos_integrator() {
    thread_local boost::math::quadrature::ooura_fourier_cos<double> rule(1e-10);
    return rule;
  }

  std::vector<double> freq_;
  std::vector<double> values_;
  double tail_p_ = kInf;
  double tail_se_ = 0.0;
  bool tail_fitted_ = false;
  double raw_mass_ = 1.0;
  std::vector<double> cdf_;  // half-line CDF at cdf_knots_
  std::vector<double> cdf_knots_;
};

}  // namespace crossmoments
