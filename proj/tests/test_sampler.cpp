// Posterior sampler validation: every Gibbs block is checked against an
// independently assembled dense conditional (Eigen), the MH blocks are
// checked by prior recovery with the likelihood disabled, and the whole
// scan is checked with a joint-distribution consistency test against
// forward simulation from the prior.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <vector>

#include "nodetherm/gmrf.hpp"
#include "nodetherm/meta_gp.hpp"
#include "nodetherm/rng.hpp"
#include "nodetherm/sampler.hpp"
#include "nodetherm/tail_marginal.hpp"
#include "nodetherm/topology.hpp"
#include "support.hpp"

using namespace nodetherm;
using namespace testsupport;

namespace {

// Four nodes on a 2x2 grid with two neighbor types: type 1 couples the
// columns, type 2 couples the rows. Every node touches both types.
Topology toy_topology() {
  return topology_from_pairs(4, 2, {{0, 1, 1}, {2, 3, 1}, {0, 2, 2}, {1, 3, 2}});
}

// Ragged per-node grids with jittered spacing and one binary covariate.
Dataset toy_dataset(int base_t, uint64_t seed) {
  Dataset d;
  d.S = 4;
  d.J = 1;
  d.t0 = 0.0;
  d.grid.resize(4);
  d.y.resize(4);
  d.x.resize(4);
  const double b0[4] = {20.1, 19.8, 20.4, 20.0};
  const double b1[4] = {1.9, 2.2, 2.05, 1.8};
  for (int s = 0; s < 4; ++s) {
    const int T = base_t + (s % 3) - 1;
    RngStream rng(seed, 900, uint64_t(s), 0);
    d.grid[s].t.resize(T);
    d.y[s].resize(T);
    d.x[s].resize(T);
    for (int i = 0; i < T; ++i) {
      d.grid[s].t[i] = i + 0.3 * std::sin(i + 1.3 * s);
      d.x[s][i] = (i >= T / 2) ? 1.0 : 0.0;
      d.y[s][i] = b0[s] + b1[s] * d.x[s][i] + 0.5 * rng.normal();
    }
  }
  return d;
}

ParamState fixed_state(const Topology& topo, const Dataset& data) {
  ParamState st;
  st.mu = {1.0, -0.5};
  st.tau = {2.0, 3.0};
  st.beta = {{20.1, 19.8, 20.4, 20.0}, {1.9, 2.2, 2.05, 1.8}};
  st.lambda = {0.6, 0.4};
  st.phi = 0.8;
  st.upsilon2 = 0.5;
  st.theta = 0.8;
  st.kappa = 1.5;
  st.xi = 0.4;
  st.sigma2 = 0.25;
  st.delta.resize(topo.S);
  for (int s = 0; s < topo.S; ++s) {
    const size_t T = data.grid[s].size();
    st.delta[s].resize(T);
    for (size_t t = 0; t < T; ++t) st.delta[s][t] = 0.3 * std::sin(0.5 * double(t) + s);
  }
  return st;
}

Eigen::MatrixXd dense(const SparsePrecision& q) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(q.n, q.n);
  for (int i = 0; i < q.n; ++i)
    for (int32_t k = q.row_ptr[i]; k < q.row_ptr[i + 1]; ++k) m(i, q.col[k]) = q.val[k];
  return m;
}

Eigen::MatrixXd dense_tridiag(const Tridiag& a) {
  const int n = int(a.diag.size());
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) m(i, i) = a.diag[i];
  for (int i = 0; i + 1 < n; ++i) {
    m(i, i + 1) = a.off[i];
    m(i + 1, i) = a.off[i];
  }
  return m;
}

double batch_se(const std::vector<double>& v, int batches) {
  const size_t per = v.size() / batches;
  std::vector<double> bm;
  for (int b = 0; b < batches; ++b) {
    double s = 0.0;
    for (size_t i = b * per; i < (b + 1) * per; ++i) s += v[i];
    bm.push_back(s / double(per));
  }
  return std::sqrt(variance(bm) / double(batches));
}

}  // namespace

TEST_CASE("coefficient gibbs update matches the dense joint conditional") {
  const Topology topo = toy_topology();
  const Dataset data = toy_dataset(30, 7);
  RunConfig cfg;
  cfg.seed = 11;
  Sampler sampler(topo, data, cfg);
  const ParamState st = fixed_state(topo, data);
  sampler.set_state(st);

  const int S = 4, P = 2, n = S * P;
  const Eigen::MatrixXd qt = dense(build_car_precision(topo, st.lambda, st.phi, 1.0));
  Eigen::MatrixXd prec = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
  for (int s = 0; s < S; ++s) {
    const size_t T = data.grid[s].size();
    Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(P, P);
    Eigen::VectorXd xty = Eigen::VectorXd::Zero(P);
    for (size_t t = 0; t < T; ++t) {
      Eigen::Vector2d xr(1.0, data.covariate(s, t, 0));
      xtx += xr * xr.transpose();
      xty += xr * (data.y[s][t] - st.delta[s][t]);
    }
    prec.block(s * P, s * P, P, P) += xtx / st.sigma2;
    for (int j = 0; j < P; ++j) {
      rhs(s * P + j) = xty(j) / st.sigma2 + st.mu[j] * st.tau[j] * qt.row(s).sum();
      for (int r = 0; r < S; ++r) prec(s * P + j, r * P + j) += st.tau[j] * qt(s, r);
    }
  }
  const Eigen::MatrixXd cov = prec.inverse();
  const Eigen::VectorXd mu_cond = cov * rhs;

  // Determinism: the same state and iteration index give the same draw.
  sampler.update_beta(5);
  const auto snap = sampler.state().beta;
  sampler.set_state(st);
  sampler.update_beta(5);
  CHECK(sampler.state().beta == snap);

  sampler.set_state(st);
  const int K = 6000;
  std::vector<std::vector<double>> draws(n);
  for (int k = 0; k < K; ++k) {
    sampler.update_beta(k);
    for (int s = 0; s < S; ++s)
      for (int j = 0; j < P; ++j) draws[s * P + j].push_back(sampler.state().beta[j][s]);
  }
  for (int i = 0; i < n; ++i) {
    const double se = std::sqrt(cov(i, i) / K);
    CHECK(std::abs(mean(draws[i]) - mu_cond(i)) < 5.0 * se);
  }
  for (int i = 0; i < n; ++i)
    for (int g = 0; g <= i; ++g) {
      double c = 0.0;
      const double mi = mean(draws[i]), mg = mean(draws[g]);
      for (int k = 0; k < K; ++k) c += (draws[i][k] - mi) * (draws[g][k] - mg);
      c /= K - 1;
      const double se = std::sqrt((cov(i, i) * cov(g, g) + cov(i, g) * cov(i, g)) / K);
      CHECK(std::abs(c - cov(i, g)) < 6.0 * se + 1e-12);
    }
}

TEST_CASE("mean and precision gibbs updates match their conjugate laws") {
  const Topology topo = toy_topology();
  const Dataset data = toy_dataset(30, 7);
  RunConfig cfg;
  cfg.seed = 13;
  Sampler sampler(topo, data, cfg);
  const ParamState st = fixed_state(topo, data);
  sampler.set_state(st);

  const Eigen::MatrixXd qt = dense(build_car_precision(topo, st.lambda, st.phi, 1.0));
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(4);

  for (int j = 0; j < 2; ++j) {
    Eigen::VectorXd bj(4);
    for (int s = 0; s < 4; ++s) bj(s) = st.beta[j][s];
    const double prec = 1.0 / cfg.priors.mu_var + st.tau[j] * ones.dot(qt * ones);
    const double m = (cfg.priors.mu_mean / cfg.priors.mu_var + st.tau[j] * ones.dot(qt * bj)) / prec;
    const double sd = 1.0 / std::sqrt(prec);

    std::vector<double> draws;
    for (int k = 0; k < 4000; ++k) {
      sampler.update_mu(k);
      draws.push_back(sampler.state().mu[j]);
    }
    sampler.set_state(st);
    const double ks = ks_statistic(draws, [&](double x) { return normal_cdf_ref((x - m) / sd); });
    CHECK(ks < 1.8 / std::sqrt(4000.0));
  }

  for (int j = 0; j < 2; ++j) {
    Eigen::VectorXd bj(4);
    for (int s = 0; s < 4; ++s) bj(s) = st.beta[j][s] - st.mu[j];
    const double shape = cfg.priors.tau_shape + 2.0;
    const double rate = cfg.priors.tau_rate + 0.5 * bj.dot(qt * bj);
    std::vector<double> draws;
    for (int k = 0; k < 4000; ++k) {
      sampler.update_tau(k);
      draws.push_back(sampler.state().tau[j]);
    }
    sampler.set_state(st);
    const double ks = ks_statistic(draws, [&](double x) { return gamma_cdf(shape, rate, x); });
    CHECK(ks < 1.8 / std::sqrt(4000.0));
  }
}

TEST_CASE("noise variance gibbs update matches its conjugate law") {
  const Topology topo = toy_topology();
  const Dataset data = toy_dataset(30, 7);
  RunConfig cfg;
  cfg.seed = 17;
  Sampler sampler(topo, data, cfg);
  const ParamState st = fixed_state(topo, data);
  sampler.set_state(st);

  double ss = 0.0;
  int64_t n = 0;
  for (int s = 0; s < 4; ++s)
    for (size_t t = 0; t < data.grid[s].size(); ++t) {
      const double fit = st.beta[0][s] + st.beta[1][s] * data.covariate(s, t, 0);
      const double e = data.y[s][t] - fit - st.delta[s][t];
      ss += e * e;
      ++n;
    }
  const double shape = cfg.priors.sigma_shape + 0.5 * n;
  const double scale = cfg.priors.sigma_scale + 0.5 * ss;

  std::vector<double> draws;
  for (int k = 0; k < 4000; ++k) {
    sampler.update_sigma2(k);
    draws.push_back(sampler.state().sigma2);
  }
  const double ks =
      ks_statistic(draws, [&](double x) { return inverse_gamma_cdf(shape, scale, x); });
  CHECK(ks < 1.8 / std::sqrt(4000.0));
}

TEST_CASE("residual path update is exact in the gaussian-body limit") {
  const Topology topo = toy_topology();
  const Dataset data = toy_dataset(30, 7);
  RunConfig cfg;
  cfg.seed = 19;
  cfg.gaussian_body = true;
  cfg.tuning.delta_prior_frac = 0.0;  // pure conditional: every proposal must be accepted
  Sampler sampler(topo, data, cfg);
  const ParamState st = fixed_state(topo, data);
  sampler.set_state(st);

  // Under a gaussian residual model the proposal is the exact conditional,
  // so every proposal must be accepted.
  const int s_probe = 1;
  const size_t T = data.grid[s_probe].size();
  const OuFactor ou = OuFactor::build(data.grid[s_probe], st.theta);
  const Eigen::MatrixXd rinv = dense_tridiag(latent_inverse(ou));
  Eigen::MatrixXd vinv = rinv / st.upsilon2;
  for (size_t t = 0; t < T; ++t) vinv(t, t) += 1.0 / st.sigma2;
  Eigen::VectorXd resid(T);
  for (size_t t = 0; t < T; ++t) {
    const double fit = st.beta[0][s_probe] + st.beta[1][s_probe] * data.covariate(s_probe, t, 0);
    resid(t) = (data.y[s_probe][t] - fit) / st.sigma2;
  }
  const Eigen::MatrixXd v = vinv.inverse();
  const Eigen::VectorXd m = v * resid;

  const size_t probe_t = 5;
  std::vector<double> draws;
  for (int k = 0; k < 4000; ++k) {
    sampler.update_delta(k);
    draws.push_back(sampler.state().delta[s_probe][probe_t]);
  }
  const auto& stats = sampler.acceptance().post[size_t(Block::kDelta)];
  CHECK(stats.proposals == 4000 * 4);
  CHECK(stats.accepts == stats.proposals);
  const double sd = std::sqrt(v(probe_t, probe_t));
  const double ks =
      ks_statistic(draws, [&](double x) { return normal_cdf_ref((x - m(probe_t)) / sd); });
  CHECK(ks < 1.8 / std::sqrt(4000.0));
}

TEST_CASE("residual path update mixes under the heavy-tail marginal") {
  const Topology topo = toy_topology();
  const Dataset data = toy_dataset(30, 7);
  RunConfig cfg;
  cfg.seed = 23;
  Sampler sampler(topo, data, cfg);
  sampler.set_state(fixed_state(topo, data));
  for (int k = 0; k < 300; ++k) sampler.update_delta(k);
  const auto& stats = sampler.acceptance().post[size_t(Block::kDelta)];
  CHECK(stats.rate() > 0.2);
  CHECK(stats.rate() <= 1.0);
}

TEST_CASE("metropolis blocks recover their priors when the likelihood is disabled") {
  const Topology topo = toy_topology();
  const Dataset data = toy_dataset(12, 7);
  RunConfig cfg;
  cfg.seed = 29;
  cfg.prior_only = true;
  cfg.iterations = 42000;
  cfg.burn_in = 2000;
  cfg.thinning = 1;
  cfg.tuning.lambda_step = 0.3;
  cfg.tuning.phi_step = 1.5;
  cfg.tuning.ups_step = 0.8;
  cfg.tuning.theta_step = 0.8;
  cfg.tuning.kappa_step = 0.5;
  cfg.tuning.xi_step = 0.5;
  cfg.tuning.adapt = false;

  Sampler sampler(topo, data, cfg);
  PosteriorChain chain = sampler.run();
  REQUIRE(chain.draw_count() == 40000);

  struct Target {
    const char* name;
    double mean, var;
    std::function<double(double)> cdf;
  };
  const std::vector<Target> targets = {
      {"lambda_1", 0.5, 1.0 / 12, [](double x) { return beta_cdf(1.0, 1.0, x); }},
      {"phi", 5.0 / 6, 5.0 / (36.0 * 7.0), [](double x) { return beta_cdf(5.0, 1.0, x); }},
      {"upsilon2", 0.5, 1.0 / 12, [](double x) { return inverse_gamma_cdf(5.0, 2.0, x); }},
      {"theta", 1.0, 0.5, [](double x) { return gamma_cdf(2.0, 2.0, x); }},
      {"kappa", 2.0, 1.0, [](double x) { return gamma_cdf(4.0, 2.0, x); }},
      {"xi", 1.0, 0.5, [](double x) { return gamma_cdf(2.0, 2.0, x); }},
  };
  for (const auto& tgt : targets) {
    CAPTURE(tgt.name);
    const std::vector<double> series = chain.scalar_series(tgt.name);
    const double z = (mean(series) - tgt.mean) / batch_se(series, 40);
    CHECK(std::abs(z) < 4.0);
    std::vector<double> thinned;
    for (size_t i = 0; i < series.size(); i += 20) thinned.push_back(series[i]);
    CHECK(ks_statistic(thinned, tgt.cdf) < 2.2 / std::sqrt(double(thinned.size())));
  }
  for (Block b : {Block::kLambda, Block::kPhi, Block::kUpsilon, Block::kTheta, Block::kKappa,
                  Block::kXi}) {
    const double r = chain.acceptance.post[size_t(b)].rate();
    CAPTURE(block_name(b));
    CHECK(r > 0.1);
    CHECK(r < 0.95);
  }
}

TEST_CASE("step adaptation moves during burn-in and freezes afterwards") {
  const Topology topo = toy_topology();
  const Dataset data = toy_dataset(14, 7);
  RunConfig cfg;
  cfg.seed = 31;
  cfg.iterations = 300;
  cfg.burn_in = 200;
  Sampler sampler(topo, data, cfg);
  for (int k = 0; k < 200; ++k) sampler.sweep(k);
  const double kappa_step_frozen = sampler.tuning().kappa_step;
  const double xi_step_frozen = sampler.tuning().xi_step;
  CHECK(kappa_step_frozen != cfg.tuning.kappa_step);
  CHECK(xi_step_frozen != cfg.tuning.xi_step);
  for (int k = 200; k < 300; ++k) sampler.sweep(k);
  CHECK(sampler.tuning().kappa_step == kappa_step_frozen);
  CHECK(sampler.tuning().xi_step == xi_step_frozen);
  // Untuned steps never move.
  CHECK(sampler.tuning().phi_step == cfg.tuning.phi_step);
  CHECK(sampler.tuning().lambda_step == cfg.tuning.lambda_step);
}

TEST_CASE("chains are bit-identical for any worker count") {
  const Topology topo = toy_topology();
  const Dataset data = toy_dataset(18, 7);
  RunConfig cfg;
  cfg.seed = 37;
  cfg.iterations = 40;
  cfg.burn_in = 10;
  cfg.thinning = 1;
  cfg.store_delta_draws = true;

  cfg.workers = 1;
  PosteriorChain a = run_chain(topo, data, cfg);
  cfg.workers = 8;
  PosteriorChain b = run_chain(topo, data, cfg);

  REQUIRE(a.draw_count() == b.draw_count());
  for (size_t k = 0; k < a.draw_count(); ++k) {
    CHECK(a.draws[k].mu == b.draws[k].mu);
    CHECK(a.draws[k].tau == b.draws[k].tau);
    CHECK(a.draws[k].lambda == b.draws[k].lambda);
    CHECK(a.draws[k].phi == b.draws[k].phi);
    CHECK(a.draws[k].upsilon2 == b.draws[k].upsilon2);
    CHECK(a.draws[k].theta == b.draws[k].theta);
    CHECK(a.draws[k].kappa == b.draws[k].kappa);
    CHECK(a.draws[k].xi == b.draws[k].xi);
    CHECK(a.draws[k].sigma2 == b.draws[k].sigma2);
    CHECK(a.draws[k].beta == b.draws[k].beta);
  }
  CHECK(a.delta_mean == b.delta_mean);
  CHECK(a.delta_draws == b.delta_draws);
}

TEST_CASE("starting state reproduces per-node least squares on clean data") {
  const Topology topo = toy_topology();
  Dataset data = toy_dataset(30, 7);
  for (int s = 0; s < 4; ++s)
    for (size_t t = 0; t < data.grid[s].size(); ++t) data.y[s][t] = 3.0 + 1.5 * data.x[s][t];
  RunConfig cfg;
  const ParamState st = Sampler::initial_state(topo, data, cfg);
  for (int s = 0; s < 4; ++s) {
    CHECK(st.beta[0][s] == doctest::Approx(3.0).epsilon(1e-4));
    CHECK(st.beta[1][s] == doctest::Approx(1.5).epsilon(1e-4));
  }
  CHECK(st.mu[0] == doctest::Approx(3.0).epsilon(1e-4));
  CHECK(st.mu[1] == doctest::Approx(1.5).epsilon(1e-4));
  CHECK(st.sigma2 < 1e-4);
  CHECK(st.sigma2 >= 1e-8);
}

// Joint-distribution consistency: a chain that alternates posterior scans
// with regeneration of the observations has the prior as its stationary
// distribution. First and second moments of every parameter must match the
// analytic prior values, and observation statistics must match forward
// simulation from the prior.
TEST_CASE("posterior scans and forward simulation agree on the joint distribution") {
  const Topology topo = toy_topology();
  const Dataset proto = toy_dataset(10, 7);
  RunConfig cfg;
  cfg.seed = 41;
  cfg.workers = 2;
  // Test priors: tight enough that the joint chain mixes on test
  // timescales. A diffuse coefficient mean or an infinite-mean tail prior
  // (xi > 1) produces metastable excursions whose sojourn times ruin any
  // finite-run comparison without changing what the code paths compute.
  cfg.priors.mu_var = 4.0;
  cfg.priors.tau_shape = 2.0;
  cfg.priors.tau_rate = 2.0;
  cfg.priors.xi_shape = 3.0;
  cfg.priors.xi_rate = 10.0;
  cfg.priors.sigma_shape = 6.0;
  cfg.priors.sigma_scale = 10.0;
  cfg.tuning.lambda_step = 0.3;
  cfg.tuning.phi_step = 1.2;
  cfg.tuning.ups_step = 0.7;
  cfg.tuning.theta_step = 0.7;
  cfg.tuning.kappa_step = 0.5;
  cfg.tuning.xi_step = 0.5;
  cfg.tuning.adapt = false;

  // Prior draw for a given replicate id, shared by both simulators.
  SparsePrecision qpattern = build_car_pattern(topo);
  const std::vector<int32_t> perm = rcm_permutation(qpattern);
  auto prior_state = [&](uint64_t rep) {
    RngStream rng(cfg.seed, 1001, rep, 0);
    ParamState st;
    st.mu = {rng.normal() * 2.0, rng.normal() * 2.0};
    st.tau = {rng.gamma(2.0, 2.0), rng.gamma(2.0, 2.0)};
    std::vector<double> conc{1.0, 1.0};
    rng.dirichlet(conc, st.lambda);
    st.phi = rng.beta(5.0, 1.0);
    st.upsilon2 = rng.inverse_gamma(5.0, 2.0);
    st.theta = rng.gamma(2.0, 2.0);
    st.kappa = rng.gamma(4.0, 2.0);
    st.xi = rng.gamma(3.0, 10.0);
    st.sigma2 = rng.inverse_gamma(6.0, 10.0);
    qpattern.fill_car(st.lambda, st.phi, 1.0);
    BandedChol chol;
    chol.factorize(qpattern, perm);
    st.beta.assign(2, std::vector<double>(4, 0.0));
    for (int j = 0; j < 2; ++j) {
      std::vector<double> zdraw;
      chol.sample_zero_mean(rng, zdraw);
      for (int s = 0; s < 4; ++s) st.beta[j][s] = st.mu[j] + zdraw[s] / std::sqrt(st.tau[j]);
    }
    const TailMarginal marg(st.upsilon2, st.kappa, st.xi);
    st.delta.resize(4);
    for (int s = 0; s < 4; ++s) {
      const OuFactor ou = OuFactor::build(proto.grid[s], st.theta);
      simulate_residual(ou, marg, false, rng, st.delta[s]);
    }
    return st;
  };
  auto splat_y = [&](const ParamState& st, RngStream& rng, std::vector<std::vector<double>>& y) {
    y.resize(4);
    for (int s = 0; s < 4; ++s) {
      const size_t T = proto.grid[s].size();
      y[s].resize(T);
      for (size_t t = 0; t < T; ++t) {
        const double fit = st.beta[0][s] + st.beta[1][s] * proto.x[s][t];
        y[s][t] = fit + st.delta[s][t] + std::sqrt(st.sigma2) * rng.normal();
      }
    }
  };

  // Forward (marginal-conditional) statistics.
  const int reps = 20000;
  std::vector<double> fwd_ylt0, fwd_ygt3;
  for (int rep = 0; rep < reps; ++rep) {
    const ParamState st = prior_state(uint64_t(rep) + 10);
    RngStream rng(cfg.seed, 1002, uint64_t(rep), 0);
    std::vector<std::vector<double>> y;
    splat_y(st, rng, y);
    double lt0 = 0.0, gt3 = 0.0, n = 0.0;
    for (int s = 0; s < 4; ++s)
      for (double v : y[s]) {
        lt0 += v < 0.0;
        gt3 += v > 3.0;
        n += 1.0;
      }
    fwd_ylt0.push_back(lt0 / n);
    fwd_ygt3.push_back(gt3 / n);
  }

  // Successive-conditional chain: posterior scan then observation refresh.
  const int64_t iters = 60000, burn = 4000;
  Sampler sampler(topo, proto, cfg);
  sampler.set_state(prior_state(1));
  sampler.regenerate_y(iters + 7);
  std::vector<double> mu0, mu1, tau0, tau1, lam1, phi, ups, theta, kappa, xi, sigma2, dlt0, ylt0,
      ygt3;
  for (int64_t k = 0; k < iters; ++k) {
    sampler.sweep(k);
    sampler.regenerate_y(k);
    if (k < burn || (k - burn) % 5 != 0) continue;
    const ParamState& st = sampler.state();
    mu0.push_back(st.mu[0]);
    mu1.push_back(st.mu[1]);
    tau0.push_back(st.tau[0]);
    tau1.push_back(st.tau[1]);
    lam1.push_back(st.lambda[0]);
    phi.push_back(st.phi);
    ups.push_back(st.upsilon2);
    theta.push_back(st.theta);
    kappa.push_back(st.kappa);
    xi.push_back(st.xi);
    sigma2.push_back(st.sigma2);
    double dneg = 0.0, ylt = 0.0, ygt = 0.0, n = 0.0;
    for (int s = 0; s < 4; ++s)
      for (size_t t = 0; t < proto.grid[s].size(); ++t) {
        dneg += st.delta[s][t] < 0.0;
        ylt += sampler.data().y[s][t] < 0.0;
        ygt += sampler.data().y[s][t] > 3.0;
        n += 1.0;
      }
    dlt0.push_back(dneg / n);
    ylt0.push_back(ylt / n);
    ygt3.push_back(ygt / n);
  }

  auto zcheck = [&](const char* name, const std::vector<double>& series, double target) {
    INFO(std::string(name));
    const double z = (mean(series) - target) / batch_se(series, 40);
    CAPTURE(mean(series));
    CHECK(std::abs(z) < 4.0);
  };
  // First moments against the analytic prior values.
  zcheck("mu0", mu0, 0.0);
  zcheck("mu1", mu1, 0.0);
  zcheck("tau0", tau0, 1.0);
  zcheck("tau1", tau1, 1.0);
  zcheck("lambda1", lam1, 0.5);
  zcheck("phi", phi, 5.0 / 6.0);
  zcheck("upsilon2", ups, 0.5);
  zcheck("theta", theta, 1.0);
  zcheck("kappa", kappa, 2.0);
  zcheck("xi", xi, 0.3);
  zcheck("sigma2", sigma2, 2.0);
  zcheck("frac(delta<0)", dlt0, 0.5);

  // Second moments where the prior variance is finite.
  auto sq = [](std::vector<double> v) {
    for (double& x : v) x *= x;
    return v;
  };
  zcheck("mu0^2", sq(mu0), 4.0);
  zcheck("mu1^2", sq(mu1), 4.0);
  zcheck("tau0^2", sq(tau0), 1.5);
  zcheck("lambda1^2", sq(lam1), 1.0 / 3.0);
  zcheck("phi^2", sq(phi), 25.0 / 36.0 + 5.0 / (36.0 * 7.0));
  zcheck("upsilon2^2", sq(ups), 0.25 + 1.0 / 12.0);
  zcheck("theta^2", sq(theta), 1.5);
  zcheck("kappa^2", sq(kappa), 5.0);
  zcheck("xi^2", sq(xi), 0.12);
  zcheck("sigma2^2", sq(sigma2), 5.0);

  // Observation indicators against forward simulation.
  auto zdiff = [&](const char* name, const std::vector<double>& succ,
                   const std::vector<double>& fwd) {
    INFO(std::string(name));
    const double se_f = std::sqrt(variance(fwd) / double(fwd.size()));
    const double se_s = batch_se(succ, 40);
    const double z = (mean(succ) - mean(fwd)) / std::sqrt(se_s * se_s + se_f * se_f);
    CAPTURE(mean(succ));
    CAPTURE(mean(fwd));
    CHECK(std::abs(z) < 4.0);
  };
  zdiff("frac(y<0)", ylt0, fwd_ylt0);
  zdiff("frac(y>3)", ygt3, fwd_ygt3);
}
