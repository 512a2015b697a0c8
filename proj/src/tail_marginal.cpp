#include "nodetherm/tail_marginal.hpp"

#include "nodetherm/normal.hpp"

namespace nodetherm {

TailMarginal::TailMarginal(double upsilon2, double kappa, double xi)
    : upsilon2_(upsilon2), kappa_(kappa), xi_(xi) {
  if (!(upsilon2 > 0.0) || !std::isfinite(upsilon2))
    throw std::domain_error("TailMarginal: upsilon2 must be positive and finite");
  if (!(kappa >= 0.0) || !std::isfinite(kappa))
    throw std::domain_error("TailMarginal: kappa must be nonnegative and finite");
  if (!(xi > 0.0) || !std::isfinite(xi))
    throw std::domain_error("TailMarginal: xi must be positive and finite");
  upsilon_ = std::sqrt(upsilon2);
  log_upsilon_ = 0.5 * std::log(upsilon2);
  eta_ = norm_mills(kappa);  // (1 - Phi(kappa)) / phi(kappa): continuity at the knot
  log_eta_ = std::log(eta_);
  log_sf_kappa_ = norm_log_sf(kappa);
  cdf_kappa_ = norm_cdf(kappa);
}

double TailMarginal::std_logpdf(double d) const {
  if (d <= kappa_) return norm_logpdf(d);
  const double w = 1.0 + xi_ * (d - kappa_) / eta_;
  return log_sf_kappa_ - log_eta_ - (1.0 / xi_ + 1.0) * std::log(w);
}

double TailMarginal::std_log_sf(double d) const {
  if (d <= kappa_) return norm_log_sf(d);
  const double w = 1.0 + xi_ * (d - kappa_) / eta_;
  return log_sf_kappa_ - std::log(w) / xi_;
}

double TailMarginal::std_cdf(double d) const {
  if (d <= kappa_) return norm_cdf(d);
  return 1.0 - std::exp(std_log_sf(d));
}

double TailMarginal::std_quantile(double u) const {
  if (!(u > 0.0 && u < 1.0)) throw std::domain_error("TailMarginal::std_quantile: u outside (0,1)");
  if (u <= cdf_kappa_) return norm_quantile(u);
  // Survival matching: (1-u)/sf(kappa) = (1 + xi (d-kappa)/eta)^(-1/xi).
  const double log_ratio = std::log1p(-u) - log_sf_kappa_;  // <= 0
  return kappa_ + eta_ / xi_ * std::expm1(-xi_ * log_ratio);
}

double TailMarginal::z_from_delta(double delta) const {
  const double d = delta / upsilon_;
  if (d <= kappa_) return d;
  const double w = 1.0 + xi_ * (d - kappa_) / eta_;
  const double log_sf_z = log_sf_kappa_ - std::log(w) / xi_;
  return norm_quantile_from_log_sf(log_sf_z);
}

double TailMarginal::delta_from_z(double z) const {
  if (z <= kappa_) return upsilon_ * z;
  const double log_ratio = log_sf_kappa_ - norm_log_sf(z);  // >= 0
  const double d = kappa_ + eta_ / xi_ * std::expm1(xi_ * log_ratio);
  return upsilon_ * d;
}

}  // namespace nodetherm
