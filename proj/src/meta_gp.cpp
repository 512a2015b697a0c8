#include "nodetherm/meta_gp.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "nodetherm/normal.hpp"

namespace nodetherm {

void TimeGrid::validate() const {
  for (size_t i = 0; i + 1 < t.size(); ++i) {
    if (!(t[i + 1] > t[i]))
      throw std::invalid_argument("TimeGrid: times must be strictly increasing (index " +
                                  std::to_string(i + 1) + ")");
  }
}

OuFactor OuFactor::build(const TimeGrid& grid, double theta) {
  if (!(theta > 0.0)) throw std::domain_error("OuFactor: theta must be positive");
  grid.validate();
  OuFactor f;
  f.theta = theta;
  const size_t n = grid.size();
  f.n = n;
  f.r.resize(n > 0 ? n - 1 : 0);
  for (size_t i = 0; i + 1 < n; ++i) f.r[i] = std::exp(-theta * (grid.t[i + 1] - grid.t[i]));
  return f;
}

double latent_logpdf(const OuFactor& f, const std::vector<double>& z) {
  const size_t n = z.size();
  if (n != f.n) throw std::invalid_argument("latent_logpdf: size mismatch");
  if (n == 0) return 0.0;
  double lp = norm_logpdf(z[0]);
  for (size_t i = 1; i < n; ++i) {
    const double r = f.r[i - 1];
    const double s2 = 1.0 - r * r;
    const double e = z[i] - r * z[i - 1];
    lp += -0.5 * e * e / s2 - 0.5 * std::log(s2) - kLogSqrt2Pi;
  }
  return lp;
}

Tridiag latent_inverse(const OuFactor& f) {
  const size_t n = f.n;
  Tridiag q;
  if (n == 0) return q;
  q.diag.assign(n, 1.0);
  q.off.assign(n > 0 ? n - 1 : 0, 0.0);
  if (n == 1) return q;
  // Accumulate the quadratic form of the AR(1) innovations: for each
  // transition i -> i+1 with s2 = 1 - r^2 the contribution is
  // (z_{i+1} - r z_i)^2 / s2.
  q.diag.assign(n, 0.0);
  q.diag[0] = 1.0;
  for (size_t i = 0; i + 1 < n; ++i) {
    const double r = f.r[i];
    const double s2 = 1.0 - r * r;
    if (!(s2 > 0.0)) throw std::runtime_error("latent_inverse: degenerate gap correlation");
    q.diag[i] += r * r / s2;
    q.diag[i + 1] += 1.0 / s2;
    q.off[i] = -r / s2;
  }
  return q;
}

void simulate_latent(const OuFactor& f, RngStream& rng, std::vector<double>& z) {
  const size_t m = f.n;
  z.resize(m);
  if (m == 0) return;
  z[0] = rng.normal();
  for (size_t i = 1; i < m; ++i) {
    const double r = f.r[i - 1];
    z[i] = r * z[i - 1] + std::sqrt(1.0 - r * r) * rng.normal();
  }
}

double residual_logpdf(const std::vector<double>& delta, const OuFactor& f,
                       const TailMarginal& marginal, bool gaussian_body,
                       std::vector<double>& z) {
  const size_t n = delta.size();
  z.resize(n);
  if (n == 0) return 0.0;
  double correction = 0.0;
  if (gaussian_body) {
    const double ups = marginal.upsilon();
    for (size_t i = 0; i < n; ++i) z[i] = delta[i] / ups;
    correction = -double(n) * 0.5 * std::log(marginal.upsilon2());
  } else {
    for (size_t i = 0; i < n; ++i) {
      z[i] = marginal.z_from_delta(delta[i]);
      correction += marginal.logpdf(delta[i]) - norm_logpdf(z[i]);
    }
  }
  return latent_logpdf(f, z) + correction;
}

void simulate_residual(const OuFactor& f, const TailMarginal& marginal,
                       bool gaussian_body, RngStream& rng, std::vector<double>& delta) {
  simulate_latent(f, rng, delta);  // reuse delta as the latent buffer
  if (gaussian_body) {
    const double ups = marginal.upsilon();
    for (double& v : delta) v *= ups;
  } else {
    for (double& v : delta) v = marginal.delta_from_z(v);
  }
}

}  // namespace nodetherm
