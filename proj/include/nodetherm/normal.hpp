#pragma once

// Standard-normal pdf/cdf/quantile helpers. Survival values are computed via
// erfc so they keep full relative precision far into the upper tail, and the
// quantile has a log-survival entry point usable when the survival probability
// itself would underflow a double.

#include <cmath>
#include <limits>
#include <stdexcept>

namespace nodetherm {

inline constexpr double kInvSqrt2   = 0.70710678118654752440;
inline constexpr double kSqrt2Pi    = 2.50662827463100050242;
inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;

inline double norm_pdf(double x) { return std::exp(-0.5 * x * x) / kSqrt2Pi; }
inline double norm_logpdf(double x) { return -0.5 * x * x - kLogSqrt2Pi; }

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }
inline double norm_sf(double x) { return 0.5 * std::erfc(x * kInvSqrt2); }

// Mills ratio sf(x)/pdf(x). Direct quotient until erfc underflows, then a
// backward-evaluated continued fraction; accurate for all finite x.
inline double norm_mills(double x) {
  if (x < 30.0) {
    double pdf = norm_pdf(x);
    if (pdf > 0.0) return norm_sf(x) / pdf;
  }
  double f = 0.0;  // m(x) = 1/(x + 1/(x + 2/(x + 3/(...))))
  for (int k = 60; k >= 1; --k) f = k / (x + f);
  return 1.0 / (x + f);
}

inline double norm_log_sf(double x) {
  if (x < 30.0) return std::log(norm_sf(x));
  return norm_logpdf(x) + std::log(norm_mills(x));
}

inline double norm_log_cdf(double x) { return norm_log_sf(-x); }

// Wichura's PPND16 rational approximation; |error| < 1e-15 over (0,1).
inline double norm_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    if (p == 0.0) return -std::numeric_limits<double>::infinity();
    if (p == 1.0) return std::numeric_limits<double>::infinity();
    throw std::domain_error("norm_quantile: p outside [0,1]");
  }
  const double q = p - 0.5;
  if (std::fabs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q *
           (((((((2509.0809287301226727 * r + 33430.575583588128105) * r +
                 67265.770927008700853) * r + 45921.953931549871457) * r +
               13731.693765509461125) * r + 1971.5909503065514427) * r +
             133.14166789178437745) * r + 3.387132872796366608) /
           (((((((5226.495278852545703 * r + 28729.085735721942674) * r +
                 39307.89580009271061) * r + 21213.794301586595867) * r +
               5394.1960214247511077) * r + 687.1870074920579083) * r +
             42.313330701600911252) * r + 1.0);
  }
  double r = (q < 0.0) ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double val;
  if (r <= 5.0) {
    r -= 1.6;
    val = (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r +
                0.24178072517745061177) * r + 1.27045825245236838258) * r +
              3.64784832476320460504) * r + 5.7694972214606914055) * r +
            4.6303378461565452959) * r + 1.42343711074968357734) /
          (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r +
                0.0151986665636164571966) * r + 0.14810397642748007459) * r +
              0.68976733498510000455) * r + 1.6763848301838038494) * r +
            2.05319162663775882187) * r + 1.0);
  } else {
    r -= 5.0;
    val = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                0.0012426609473880784386) * r + 0.026532189526576123093) * r +
              0.29656057182850489123) * r + 1.7848265399172913358) * r +
            5.4637849111641143699) * r + 6.6579046435011037772) /
          (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r +
                1.8463183175100546818e-5) * r + 7.868691311456132591e-4) * r +
              0.0148753612908506148525) * r + 0.13692988092273580531) * r +
            0.59983220655588793769) * r + 1.0);
  }
  return (q < 0.0) ? -val : val;
}

// z such that log(norm_sf(z)) == log_sf, for log_sf <= log(0.5) (z >= 0 side
// handled explicitly; small |log_sf| routed through norm_quantile). Newton in
// z with the Mills ratio as the exact derivative scale.
inline double norm_quantile_from_log_sf(double log_sf) {
  if (!(log_sf <= 0.0)) throw std::domain_error("norm_quantile_from_log_sf: log survival must be <= 0");
  if (log_sf > -690.0) {
    double s = std::exp(log_sf);
    if (s > 1e-290) return -norm_quantile(s);
  }
  // Asymptotic seed: log sf(z) ~ -z^2/2 - log z - log sqrt(2 pi).
  double u = -2.0 * log_sf;
  double z = std::sqrt(u);
  for (int i = 0; i < 3; ++i) z = std::sqrt(u - 2.0 * std::log(z) - 2.0 * kLogSqrt2Pi);
  for (int i = 0; i < 6; ++i) {
    double f = norm_log_sf(z) - log_sf;
    double step = f * norm_mills(z);  // d/dz log sf = -1/mills
    z += step;
    if (std::fabs(step) < 1e-14 * std::max(1.0, z)) break;
  }
  return z;
}

}  // namespace nodetherm
