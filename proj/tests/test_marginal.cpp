#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "nodetherm/normal.hpp"
#include "nodetherm/tail_marginal.hpp"
#include "support.hpp"

using namespace nodetherm;

namespace {

// Quadrature oracle: integrate the standardized density over the body with
// uniform panels and over the heavy tail with geometrically growing panels.
double integrate_std_density(const TailMarginal& m, double* tail_mass = nullptr) {
  std::vector<double> x, w;
  testsupport::gauss_legendre(-40.0, m.kappa(), 400, x, w);
  double body = 0.0;
  for (size_t i = 0; i < x.size(); ++i) body += w[i] * m.std_pdf(x[i]);
  double tail = 0.0;
  double lo = m.kappa(), width = 0.25;
  for (int p = 0; p < 220; ++p) {
    testsupport::gauss_legendre(lo, lo + width, 1, x, w);
    for (size_t i = 0; i < x.size(); ++i) tail += w[i] * m.std_pdf(x[i]);
    lo += width;
    width *= 1.35;
    if (lo > 1e18) break;
  }
  if (tail_mass) *tail_mass = tail;
  return body + tail;
}

}  // namespace

TEST_CASE("density normalizes to 1 under an independent quadrature oracle") {
  for (double kappa : {0.0, 0.5, 1.0, 1.66, 2.5, 4.0}) {
    for (double xi : {0.05, 0.12, 0.3, 0.7}) {
      TailMarginal m(1.0, kappa, xi);
      double tail = 0.0;
      double total = integrate_std_density(m, &tail);
      INFO("kappa=", kappa, " xi=", xi, " total=", total);
      CHECK(std::fabs(total - 1.0) < 1e-8);
      // Tail mass must equal the normal survival at the knot.
      CHECK(tail == doctest::Approx(norm_sf(kappa)).epsilon(1e-8));
    }
  }
}

TEST_CASE("knot continuity pins the tail scale") {
  // At kappa = 0 the implied scale is sqrt(pi/2).
  TailMarginal m0(1.0, 0.0, 0.12);
  CHECK(m0.eta() == doctest::Approx(1.2533141).epsilon(1e-6));
  CHECK(m0.eta() == doctest::Approx(std::sqrt(2.0 * std::acos(-1.0)) / 2.0).epsilon(1e-12));

  for (double kappa : {0.3, 1.0, 1.66, 3.0}) {
    TailMarginal m(1.0, kappa, 0.2);
    CHECK(m.eta() == doctest::Approx(norm_sf(kappa) / norm_pdf(kappa)).epsilon(1e-12));
    // Density continuous across the knot.
    double left = m.std_pdf(kappa - 1e-11);
    double right = m.std_pdf(kappa + 1e-11);
    CHECK(left == doctest::Approx(right).epsilon(1e-8));
    // Left of the knot the density is exactly normal.
    CHECK(m.std_pdf(kappa - 0.5) == doctest::Approx(norm_pdf(kappa - 0.5)).epsilon(1e-14));
  }
}

TEST_CASE("cdf matches the integrated density and the quantile inverts it") {
  TailMarginal m(1.0, 1.66, 0.12);
  // CDF at tail points via analytic body + quadrature over [kappa, d].
  for (double d : {2.0, 3.0, 5.0, 12.0}) {
    std::vector<double> x, w;
    testsupport::gauss_legendre(m.kappa(), d, 400, x, w);
    double integral = norm_cdf(m.kappa());
    for (size_t i = 0; i < x.size(); ++i) integral += w[i] * m.std_pdf(x[i]);
    CHECK(m.std_cdf(d) == doctest::Approx(integral).epsilon(1e-10));
  }
  // Body cdf is the normal cdf.
  CHECK(m.std_cdf(-1.0) == doctest::Approx(norm_cdf(-1.0)).epsilon(1e-14));
  CHECK(m.std_cdf(1.0) == doctest::Approx(norm_cdf(1.0)).epsilon(1e-14));

  for (double u : {1e-6, 0.025, 0.5, 0.9, norm_cdf(1.66) + 1e-9, 0.9599, 0.999, 1.0 - 1e-9}) {
    double d = m.std_quantile(u);
    CHECK(m.std_cdf(d) == doctest::Approx(u).epsilon(1e-9));
  }
  // Quantile is monotone across the knot.
  double prev = -1e300;
  for (double u = 0.001; u < 0.9999; u += 0.0007) {
    double d = m.std_quantile(u);
    CHECK(d > prev);
    prev = d;
  }
  CHECK_THROWS(m.std_quantile(0.0));
  CHECK_THROWS(m.std_quantile(1.0));
}

TEST_CASE("survival function stays accurate deep in the tail") {
  TailMarginal m(1.0, 1.0, 0.3);
  // log sf is continuous at the knot and strictly decreasing.
  CHECK(m.std_log_sf(1.0 - 1e-12) == doctest::Approx(m.std_log_sf(1.0 + 1e-12)).epsilon(1e-9));
  double prev = 1.0;
  for (double d = -3.0; d < 500.0; d += 0.37) {
    double s = m.std_log_sf(d);
    CHECK(s < prev);
    prev = s;
  }
  // Deep tail follows the polynomial decay rate: sf ~ w^{-1/xi}.
  double d1 = 1e6, d2 = 1e7;
  double slope = (m.std_log_sf(d2) - m.std_log_sf(d1)) / (std::log(d2) - std::log(d1));
  CHECK(slope == doctest::Approx(-1.0 / 0.3).epsilon(1e-3));
}

TEST_CASE("natural scale is the standardized scale stretched by upsilon") {
  TailMarginal m(4.0, 1.5, 0.2);  // upsilon = 2
  CHECK(m.upsilon() == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(m.cdf(3.0) == doctest::Approx(m.std_cdf(1.5)).epsilon(1e-14));
  CHECK(m.quantile(0.8) == doctest::Approx(2.0 * m.std_quantile(0.8)).epsilon(1e-14));
  CHECK(m.logpdf(3.0) == doctest::Approx(m.std_logpdf(1.5) - std::log(2.0)).epsilon(1e-12));
  // logpdf integrates to 1 on the natural scale too (scaling check at a point).
  std::vector<double> x, w;
  testsupport::gauss_legendre(-60.0, 40.0, 800, x, w);
  double total = 0.0;
  for (size_t i = 0; i < x.size(); ++i) total += w[i] * std::exp(m.logpdf(x[i]));
  CHECK(total == doctest::Approx(1.0 - m.std_sf(20.0)).epsilon(1e-7));
}

TEST_CASE("copula transforms round trip, including identity below the knot") {
  TailMarginal m(2.25, 1.66, 0.12);  // upsilon = 1.5
  // Identity below the knot: delta = upsilon z exactly.
  for (double z : {-4.0, -1.0, 0.0, 1.0, 1.6599}) {
    CHECK(m.delta_from_z(z) == doctest::Approx(1.5 * z).epsilon(1e-14));
    CHECK(m.z_from_delta(1.5 * z) == doctest::Approx(z).epsilon(1e-12));
  }
  // Above the knot: survival matching, tested by round trip far out.
  for (double z : {1.7, 2.0, 3.0, 5.0, 8.0, 15.0, 40.0}) {
    double delta = m.delta_from_z(z);
    CHECK(delta > 1.5 * m.kappa());
    CHECK(m.z_from_delta(delta) == doctest::Approx(z).epsilon(1e-10));
    // Survival probabilities agree between the two scales.
    CHECK(m.std_log_sf(delta / 1.5) == doctest::Approx(norm_log_sf(z)).epsilon(1e-10));
  }
  // Monotone through the knot.
  double prev = -1e300;
  for (double z = -5.0; z <= 12.0; z += 0.013) {
    double d = m.delta_from_z(z);
    CHECK(d > prev);
    prev = d;
  }
}

TEST_CASE("parameter validation") {
  CHECK_THROWS(TailMarginal(0.0, 1.0, 0.1));
  CHECK_THROWS(TailMarginal(-1.0, 1.0, 0.1));
  CHECK_THROWS(TailMarginal(1.0, -0.5, 0.1));
  CHECK_THROWS(TailMarginal(1.0, 1.0, 0.0));
  CHECK_THROWS(TailMarginal(1.0, 1.0, -0.2));
  CHECK_THROWS(TailMarginal(1.0, std::nan(""), 0.1));
}
