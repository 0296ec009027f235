#pragma once

// Independent extended-precision evaluation of sigma^2(tau) for the
// log-tail scale mixture (length scale 1), sharing no code with the model: s = e^y with density
// c exp(-y - e^{-y}/2) ln(e + e^y)^{-beta} dy.

#include <boost/math/quadrature/gauss.hpp>
#include <boost/multiprecision/cpp_bin_float.hpp>

namespace crossmoments::oracle {

using Real = boost::multiprecision::number<boost::multiprecision::cpp_bin_float<50>,
                                           boost::multiprecision::et_off>;

struct LogTailOracle {
  Real beta;
  Real norm;     // c
  Real lambda2;  // E[s]

  static constexpr int kLo = -8;
  static constexpr int kHi = 200;

  explicit LogTailOracle(double b) : beta(b) {
    const Real raw_mass = integrate([](const Real& y, const Real& w) { return w * exp(-y); });
    norm = Real(1) / raw_mass;
    // E[s] = c int e^{-e^{-y}/2} L^-beta dy; past y = 200, L = y and the
    // exponential factor is 1 to far below working precision.
    const Real head = integrate([](const Real&, const Real& w) { return w; });
    const Real tail = pow(Real(kHi), Real(1) - beta) / (beta - Real(1));
    lambda2 = norm * (head + tail);
  }

  // int over [kLo, kHi] of g(y, e^{-e^{-y}/2} L(y)^-beta)
  template <class G>
  Real integrate(G&& g) const {
    using Rule = boost::math::quadrature::gauss<Real, 30>;
    Real total = 0;
    const Real e1 = exp(Real(1));
    for (int k = 0; k < (kHi - kLo) * 4; ++k) {
      const Real a = Real(kLo) + Real(k) / 4, b = a + Real(1) / 4;
      total += Rule::integrate(
          [&](const Real& y) {
            const Real w = exp(-exp(-y) / 2) * pow(log(e1 + exp(y)), -beta);
            return g(y, w);
          },
          a, b);
    }
    return total;
  }

  // lambda2 - r'^2 / (1 - r^2) with 1 - r and r' integrated directly
  [[nodiscard]] Real sigma2(const Real& tau) const {
    const Real h = tau * tau / 2;
    const Real one_minus_r = norm * integrate([&](const Real& y, const Real& w) {
      return w * exp(-y) * -expm1(-exp(y) * h);
    });
    const Real dr = -tau * norm * integrate([&](const Real& y, const Real& w) { return w * exp(-exp(y) * h); });
    const Real r = Real(1) - one_minus_r;
    return lambda2 - dr * dr / (one_minus_r * (Real(1) + r));
  }
};

}  // namespace crossmoments::oracle
