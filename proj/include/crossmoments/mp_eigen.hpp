#pragma once

// Eigen scalar traits for boost::multiprecision numbers (cpp_bin_float,
// float128). Boost's own adapter predates Eigen 3.4 and lacks infinity().

#include <limits>

#include <Eigen/Core>
#include <boost/multiprecision/number.hpp>

namespace Eigen {

template <class Backend, boost::multiprecision::expression_template_option ET>
struct NumTraits<boost::multiprecision::number<Backend, ET>> {
  using self_type = boost::multiprecision::number<Backend, ET>;
  using Real = self_type;
  using NonInteger = self_type;
  using Literal = double;
  using Nested = self_type;
  enum {
    IsComplex = 0,
    IsInteger = 0,
    ReadCost = 1,
    AddCost = 4,
    MulCost = 8,
    IsSigned = 1,
    RequireInitialization = 1,
  };
  static Real epsilon() { return std::numeric_limits<Real>::epsilon(); }
  static Real dummy_precision() { return 1000 * epsilon(); }
  static Real highest() { return (std::numeric_limits<Real>::max)(); }
  static Real lowest() { return std::numeric_limits<Real>::lowest(); }
  static Real infinity() { return std::numeric_limits<Real>::infinity(); }
  static Real quiet_NaN() { return std::numeric_limits<Real>::quiet_NaN(); }
  static int digits10() { return std::numeric_limits<Real>::digits10; }
  static int digits() { return std::numeric_limits<Real>::digits; }
};

}  // namespace Eigen
