#pragma once

#include <cmath>
#include <limits>
#include <numbers>

#include <boost/math/special_functions/erf.hpp>

namespace igmrf::stats {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

/// Standard normal CDF.
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Standard normal quantile.
inline double normal_quantile(double p) { return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p); }

inline double log_normal_pdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * z * z - std::log(sd) - 0.5 * kLogTwoPi;
}

inline double log_std_normal_pdf(double z) { return -0.5 * z * z - 0.5 * kLogTwoPi; }

/// ln X ~ N(log_median, log_variance).
inline double log_lognormal_pdf(double x, double log_median, double log_variance) {
  if (!(x > 0.0)) return kNegInf;
  return log_normal_pdf(std::log(x), log_median, std::sqrt(log_variance)) - std::log(x);
}

/// Gamma with shape/rate parameterisation.
inline double log_gamma_pdf(double x, double shape, double rate) {
  if (!(x > 0.0)) return kNegInf;
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

/// Density proportional to x^{-shape-1} exp(-scale / x).
inline double log_inverse_gamma_pdf(double x, double shape, double scale) {
  if (!(x > 0.0)) return kNegInf;
  return shape * std::log(scale) - std::lgamma(shape) - (shape + 1.0) * std::log(x) - scale / x;
}

inline double log_beta_pdf(double x, double a, double b) {
  if (!(x > 0.0 && x < 1.0)) return kNegInf;
  return (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) + std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b);
}

inline double log_uniform_pdf(double x, double lower, double upper) {
  if (!(x > lower && x < upper)) return kNegInf;
  return -std::log(upper - lower);
}

}  // namespace igmrf::stats
