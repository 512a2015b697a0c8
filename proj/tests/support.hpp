#pragma once

// Shared helpers for the test binaries: summary statistics, distribution CDFs
// for goodness-of-fit checks, and a Kolmogorov-Smirnov statistic. These are
// deliberately independent implementations (series/continued fractions) so
// library code is never used to validate itself.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace testsupport {

inline double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

inline double variance(const std::vector<double>& v) {
  double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / double(v.size() - 1);
}

inline double covariance(const std::vector<double>& a, const std::vector<double>& b) {
  double ma = mean(a), mb = mean(b);
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += (a[i] - ma) * (b[i] - mb);
  return s / double(a.size() - 1);
}

inline double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  return covariance(a, b) / std::sqrt(variance(a) * variance(b));
}

// Regularized lower incomplete gamma P(a, x).
inline double gamma_p(double a, double x) {
  if (x < 0.0 || a <= 0.0) throw std::domain_error("gamma_p: bad arguments");
  if (x == 0.0) return 0.0;
  const double gln = std::lgamma(a);
  if (x < a + 1.0) {  // series
    double ap = a, del = 1.0 / a, sum = del;
    for (int n = 0; n < 500; ++n) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::fabs(del) < std::fabs(sum) * 1e-16) break;
    }
    return sum * std::exp(-x + a * std::log(x) - gln);
  }
  // continued fraction for Q(a, x)
  const double tiny = 1e-300;
  double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
  for (int i = 1; i <= 500; ++i) {
    double an = -double(i) * (double(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < 1e-16) break;
  }
  double q = std::exp(-x + a * std::log(x) - gln) * h;
  return 1.0 - q;
}

// Regularized incomplete beta I_x(a, b) via the standard continued fraction.
inline double beta_cf(double a, double b, double x) {
  const double tiny = 1e-300;
  double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0, d = 1.0 - qab * x / qap;
  if (std::fabs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 500; ++m) {
    int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < 1e-16) break;
  }
  return h;
}

inline double beta_cdf(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  double bt = std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                       a * std::log(x) + b * std::log(1.0 - x));
  if (x < (a + 1.0) / (a + b + 2.0)) return bt * beta_cf(a, b, x) / a;
  return 1.0 - bt * beta_cf(b, a, 1.0 - x) / b;
}

inline double gamma_cdf(double shape, double rate, double x) {
  return x <= 0.0 ? 0.0 : gamma_p(shape, rate * x);
}

inline double inverse_gamma_cdf(double shape, double scale, double x) {
  return x <= 0.0 ? 0.0 : 1.0 - gamma_p(shape, scale / x);
}

inline double normal_cdf_ref(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// One-sample KS statistic against a supplied CDF. Sorts a copy.
inline double ks_statistic(std::vector<double> sample, const std::function<double(double)>& cdf) {
  std::sort(sample.begin(), sample.end());
  const size_t n = sample.size();
  double d = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double f = cdf(sample[i]);
    d = std::max(d, std::fabs(f - double(i) / n));
    d = std::max(d, std::fabs(double(i + 1) / n - f));
  }
  return d;
}

// Gauss-Legendre nodes/weights on [a, b], split into `panels` panels of
// 20-point rule each; good to ~1e-14 for smooth integrands.
inline void gauss_legendre(double a, double b, int panels, std::vector<double>& x,
                           std::vector<double>& w) {
  static const double xg[10] = {
      0.0765265211334973, 0.2277858511416451, 0.3737060887154195,
      0.5108670019508271, 0.6360536807265150, 0.7463319064601508,
      0.8391169718222188, 0.9122344282513259, 0.9639719272779138,
      0.9931285991850949};
  static const double wg[10] = {
      0.1527533871307258, 0.1491729864726037, 0.1420961093183820,
      0.1316886384491766, 0.1181945319615184, 0.1019301198172404,
      0.0832767415767048, 0.0626720483341091, 0.0406014298003869,
      0.0176140071391521};
  x.clear();
  w.clear();
  double h = (b - a) / panels;
  for (int p = 0; p < panels; ++p) {
    double lo = a + p * h, mid = lo + 0.5 * h, half = 0.5 * h;
    for (int i = 0; i < 10; ++i) {
      x.push_back(mid - half * xg[i]);
      w.push_back(half * wg[i]);
      x.push_back(mid + half * xg[i]);
      w.push_back(half * wg[i]);
    }
  }
}

}  // namespace testsupport
