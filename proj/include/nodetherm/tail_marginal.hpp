#pragma once

// Marginal distribution of the residual process: standard normal body up to a
// knot kappa, generalized-Pareto upper tail above it. The GPD scale eta is not
// free: it is pinned to (1 - Phi(kappa)) / phi(kappa) so the density is
// continuous at the knot. On the natural (degrees C) scale the residual is
// upsilon times the standardized variate.
//
// All tail arithmetic runs in log-survival space so quantile/transform
// round trips stay exact even when exceedance probabilities underflow.

#include <cmath>
#include <stdexcept>

namespace nodetherm {

class TailMarginal {
 public:
  // upsilon2: squared natural scale; kappa: knot (standardized); xi: GPD shape.
  TailMarginal(double upsilon2, double kappa, double xi);

  double upsilon2() const { return upsilon2_; }
  double upsilon() const { return upsilon_; }
  double kappa() const { return kappa_; }
  double xi() const { return xi_; }
  double eta() const { return eta_; }             // GPD scale implied by continuity
  double log_sf_kappa() const { return log_sf_kappa_; }

  // Standardized scale d = delta / upsilon.
  double std_logpdf(double d) const;
  double std_pdf(double d) const { return std::exp(std_logpdf(d)); }
  double std_cdf(double d) const;
  double std_sf(double d) const { return std::exp(std_log_sf(d)); }
  double std_log_sf(double d) const;
  double std_quantile(double u) const;

  // Natural scale.
  double logpdf(double delta) const { return std_logpdf(delta / upsilon_) - log_upsilon_; }
  double cdf(double delta) const { return std_cdf(delta / upsilon_); }
  double quantile(double u) const { return upsilon_ * std_quantile(u); }

  // Copula transforms between the natural-scale residual and its standard
  // normal score. Below the knot these are the identity up to the upsilon
  // scaling; above it they match survival probabilities in log space.
  double z_from_delta(double delta) const;
  double delta_from_z(double z) const;

 private:
  double upsilon2_, upsilon_, log_upsilon_, kappa_, xi_;
  double eta_, log_eta_, log_sf_kappa_, cdf_kappa_;
};

}  // namespace nodetherm
