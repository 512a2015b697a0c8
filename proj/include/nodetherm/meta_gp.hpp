#pragma once

// Temporal residual process for one node: a latent standard-normal AR(1) on
// an irregular grid (exponential correlation, lag correlations
// r_i = exp(-theta * gap_i)) pushed through the tail marginal. Everything is
// O(T) per node: log density by the AR(1) recursion, the inverse correlation
// matrix as an explicit tridiagonal, and simulation by the same recursion.

#include <cstdint>
#include <vector>

#include "nodetherm/rng.hpp"
#include "nodetherm/tail_marginal.hpp"
#include "nodetherm/tridiag.hpp"

namespace nodetherm {

struct TimeGrid {
  std::vector<double> t;  // strictly increasing observation times (minutes)

  size_t size() const { return t.size(); }
  void validate() const;  // throws naming the first offending index
};

// Lag correlations of the latent process for one grid at one theta.
struct OuFactor {
  double theta = 0.0;
  size_t n = 0;           // grid length (r alone cannot distinguish T=0 from T=1)
  std::vector<double> r;  // r[i] = corr(Z_{i}, Z_{i+1}), size max(T-1, 0)

  static OuFactor build(const TimeGrid& grid, double theta);
};

// Log density of z under the unit-variance latent process.
double latent_logpdf(const OuFactor& f, const std::vector<double>& z);

// Inverse of the latent correlation matrix; tridiagonal for any grid.
Tridiag latent_inverse(const OuFactor& f);

// Draw a latent path into z (resized).
void simulate_latent(const OuFactor& f, RngStream& rng, std::vector<double>& z);

// Joint log density of a residual path delta under the composed model:
// latent normal dependence plus the marginal/Jacobian correction per point.
// With gaussian_body = true the marginal is plain N(0, upsilon^2) and z is
// delta/upsilon (the tail layer is bypassed). On return z holds the latent
// scores for delta.
double residual_logpdf(const std::vector<double>& delta, const OuFactor& f,
                       const TailMarginal& marginal, bool gaussian_body,
                       std::vector<double>& z);

// Simulate a residual path: latent recursion then the marginal map.
void simulate_residual(const OuFactor& f, const TailMarginal& marginal,
                       bool gaussian_body, RngStream& rng, std::vector<double>& delta);

}  // namespace nodetherm
