#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "nodetherm/meta_gp.hpp"
#include "nodetherm/normal.hpp"
#include "support.hpp"

using namespace nodetherm;

namespace {

TimeGrid irregular_grid(int n, uint64_t seed) {
  RngStream s(seed, 99);
  TimeGrid g;
  double t = 0.0;
  for (int i = 0; i < n; ++i) {
    t += 0.8 + 0.4 * s.uniform();
    g.t.push_back(t);
  }
  return g;
}

Eigen::MatrixXd dense_correlation(const TimeGrid& g, double theta) {
  const int n = int(g.size());
  Eigen::MatrixXd r(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) r(i, j) = std::exp(-theta * std::fabs(g.t[i] - g.t[j]));
  return r;
}

double dense_mvn_logpdf(const Eigen::VectorXd& x, const Eigen::MatrixXd& cov) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  Eigen::VectorXd sol = llt.solve(x);
  return -0.5 * (x.dot(sol) + logdet + x.size() * std::log(2.0 * std::acos(-1.0)));
}

}  // namespace

TEST_CASE("gap correlations and grid validation") {
  TimeGrid g;
  g.t = {0.0, 1.0, 3.5};
  auto f = OuFactor::build(g, 0.7);
  REQUIRE(f.r.size() == 2);
  CHECK(f.r[0] == doctest::Approx(std::exp(-0.7)).epsilon(1e-15));
  CHECK(f.r[1] == doctest::Approx(std::exp(-0.7 * 2.5)).epsilon(1e-15));
  CHECK(f.n == 3);

  TimeGrid bad;
  bad.t = {0.0, 2.0, 2.0};
  CHECK_THROWS_WITH_AS(static_cast<void>(OuFactor::build(bad, 1.0)),
                       doctest::Contains("index 2"), std::invalid_argument);
  CHECK_THROWS(static_cast<void>(OuFactor::build(g, 0.0)));
  CHECK_THROWS(static_cast<void>(OuFactor::build(g, -1.0)));
}

TEST_CASE("latent log density matches a dense multivariate normal oracle") {
  auto g = irregular_grid(50, 5);
  const double theta = 0.8;
  auto f = OuFactor::build(g, theta);
  Eigen::MatrixXd corr = dense_correlation(g, theta);

  RngStream s(17, 98);
  for (int rep = 0; rep < 5; ++rep) {
    std::vector<double> z(g.size());
    for (double& v : z) v = 2.0 * s.normal();
    Eigen::VectorXd ze = Eigen::Map<Eigen::VectorXd>(z.data(), z.size());
    CHECK(latent_logpdf(f, z) == doctest::Approx(dense_mvn_logpdf(ze, corr)).epsilon(1e-10));
  }
  // Single point reduces to the standard normal.
  TimeGrid g1;
  g1.t = {4.2};
  auto f1 = OuFactor::build(g1, theta);
  std::vector<double> z1 = {0.33};
  CHECK(latent_logpdf(f1, z1) == doctest::Approx(norm_logpdf(0.33)).epsilon(1e-14));
}

TEST_CASE("tridiagonal inverse equals the dense inverse of the correlation matrix") {
  auto g = irregular_grid(30, 9);
  const double theta = 1.3;
  auto f = OuFactor::build(g, theta);
  Tridiag q = latent_inverse(f);
  Eigen::MatrixXd qd = dense_correlation(g, theta).inverse();
  const int n = int(g.size());
  for (int i = 0; i < n; ++i) {
    CHECK(q.diag[i] == doctest::Approx(qd(i, i)).epsilon(1e-9));
    if (i + 1 < n) CHECK(q.off[i] == doctest::Approx(qd(i, i + 1)).epsilon(1e-9));
  }
  // Off-tridiagonal entries of the dense inverse vanish.
  double max_far = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 2; j < n; ++j) max_far = std::max(max_far, std::fabs(qd(i, j)));
  CHECK(max_far < 1e-9);

  // Closed forms: corner 1 + r^2/s^2, interior 1/s_{i-1}^2 + r_i^2/s_i^2.
  auto s2 = [&](int i) { return 1.0 - f.r[i] * f.r[i]; };
  CHECK(q.diag[0] == doctest::Approx(1.0 + f.r[0] * f.r[0] / s2(0)).epsilon(1e-14));
  CHECK(q.diag[1] == doctest::Approx(1.0 / s2(0) + f.r[1] * f.r[1] / s2(1)).epsilon(1e-14));
  CHECK(q.off[0] == doctest::Approx(-f.r[0] / s2(0)).epsilon(1e-14));
}

TEST_CASE("latent simulation reproduces the gap correlation") {
  TimeGrid g;
  for (int i = 0; i < 200; ++i) g.t.push_back(double(i));
  auto f = OuFactor::build(g, 0.05);  // r = exp(-0.05) ~ 0.951
  std::vector<double> z;
  std::vector<double> lag0, lag1;
  for (uint64_t rep = 0; rep < 400; ++rep) {
    RngStream s(123, 77, rep);
    simulate_latent(f, s, z);
    for (size_t i = 0; i + 1 < z.size(); ++i) {
      lag0.push_back(z[i]);
      lag1.push_back(z[i + 1]);
    }
  }
  CHECK(testsupport::variance(lag0) == doctest::Approx(1.0).epsilon(0.03));
  CHECK(testsupport::correlation(lag0, lag1) == doctest::Approx(std::exp(-0.05)).epsilon(0.01));
}

TEST_CASE("residual log density matches the change-of-variables oracle") {
  auto g = irregular_grid(40, 21);
  const double theta = 0.6;
  auto f = OuFactor::build(g, theta);
  TailMarginal m(1.44, 1.2, 0.25);  // upsilon = 1.2
  Eigen::MatrixXd corr = dense_correlation(g, theta);

  RngStream s(55, 76);
  std::vector<double> delta(g.size()), z;
  // Mix of body and tail values, some noticeably above the knot.
  for (size_t i = 0; i < delta.size(); ++i)
    delta[i] = 1.2 * (s.normal() + (i % 7 == 0 ? 2.5 : 0.0));

  // Oracle: z via the cdf composition (independent of the log-sf matching in
  // the library), dense latent normal, then the marginal/Jacobian terms.
  Eigen::VectorXd zo(delta.size());
  double corr_terms = 0.0;
  for (size_t i = 0; i < delta.size(); ++i) {
    zo(i) = norm_quantile(m.std_cdf(delta[i] / 1.2));
    corr_terms += m.logpdf(delta[i]) - norm_logpdf(zo(i));
  }
  double oracle = dense_mvn_logpdf(zo, corr) + corr_terms;
  CHECK(residual_logpdf(delta, f, m, false, z) == doctest::Approx(oracle).epsilon(1e-8));
  // The returned scores agree with the cdf-composition scores.
  for (size_t i = 0; i < z.size(); ++i) CHECK(z[i] == doctest::Approx(zo(i)).epsilon(1e-8));
}

TEST_CASE("gaussian body variant equals a scaled latent normal and the sub-knot identity holds") {
  auto g = irregular_grid(35, 33);
  auto f = OuFactor::build(g, 0.9);
  TailMarginal m(2.25, 1.66, 0.12);  // upsilon = 1.5
  Eigen::MatrixXd cov = 2.25 * dense_correlation(g, 0.9);

  RngStream s(3, 75);
  std::vector<double> delta(g.size()), z;
  for (double& v : delta) v = 0.8 * s.normal();  // comfortably below the knot

  Eigen::VectorXd de = Eigen::Map<Eigen::VectorXd>(delta.data(), delta.size());
  double dense = dense_mvn_logpdf(de, cov);
  double gauss = residual_logpdf(delta, f, m, true, z);
  CHECK(gauss == doctest::Approx(dense).epsilon(1e-10));

  // With every value below the knot the tail model collapses to the gaussian.
  bool all_below = true;
  for (double v : delta) all_below = all_below && (v / 1.5 <= 1.66);
  REQUIRE(all_below);
  double tail = residual_logpdf(delta, f, m, false, z);
  CHECK(tail == doctest::Approx(gauss).epsilon(1e-12));
}

TEST_CASE("residual simulation has the marginal body, tail rate, and temporal correlation") {
  TimeGrid g;
  for (int i = 0; i < 100; ++i) g.t.push_back(double(i));
  auto f = OuFactor::build(g, 0.08);
  TailMarginal m(1.0, 1.0, 0.3);
  std::vector<double> delta;
  std::vector<double> all, lag0, lag1;
  int exceed = 0, total = 0;
  for (uint64_t rep = 0; rep < 600; ++rep) {
    RngStream s(777, 74, rep);
    simulate_residual(f, m, false, s, delta);
    for (size_t i = 0; i < delta.size(); ++i) {
      all.push_back(delta[i]);
      ++total;
      if (delta[i] > 1.0) ++exceed;
      if (i + 1 < delta.size()) {
        lag0.push_back(delta[i]);
        lag1.push_back(delta[i + 1]);
      }
    }
  }
  // Exceedance rate over the knot equals the normal survival there.
  CHECK(double(exceed) / total == doctest::Approx(norm_sf(1.0)).epsilon(0.03));
  // Dependence survives the marginal map (monotone transform, so the rank
  // correlation stays high; Pearson on values is a loose check).
  CHECK(testsupport::correlation(lag0, lag1) > 0.85);
  // Body quantiles match the marginal quantile function.
  std::sort(all.begin(), all.end());
  double q25 = all[size_t(0.25 * all.size())];
  CHECK(q25 == doctest::Approx(m.quantile(0.25)).epsilon(0.05));
}
