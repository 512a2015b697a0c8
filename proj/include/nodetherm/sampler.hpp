#pragma once

// Posterior sampler: one scan updates, in order,
//   beta    spatially coupled regression coefficients   (Gibbs, banded)
//   delta   per-node residual paths                     (MH, parallel)
//   mu      coefficient-field means                     (Gibbs)
//   tau     coefficient-field precisions                (Gibbs)
//   lambda  neighbor-type weights                       (MH, Dirichlet walk)
//   phi     spatial dominance parameter                 (MH, logit walk)
//   upsilon2, theta, kappa, xi                          (MH, log walks)
//   sigma2  observation noise variance                  (Gibbs)
// kappa and xi steps are adapted toward 40% acceptance during burn-in and
// frozen afterwards. Every random draw is addressed by (seed, block,
// iteration, node), so chains are bit-identical for any worker count.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "nodetherm/data.hpp"
#include "nodetherm/gmrf.hpp"
#include "nodetherm/meta_gp.hpp"
#include "nodetherm/tail_marginal.hpp"
#include "nodetherm/topology.hpp"

namespace nodetherm {

struct Priors {
  double mu_mean = 0.0, mu_var = 100.0;     // mu_j ~ N(mu_mean, mu_var)
  double tau_shape = 1.0, tau_rate = 0.5;   // tau_j ~ Gamma
  std::vector<double> lambda_conc;          // Dirichlet; empty = all ones
  double phi_a = 5.0, phi_b = 1.0;          // phi ~ Beta
  double ups_shape = 5.0, ups_scale = 2.0;  // upsilon2 ~ InverseGamma
  double theta_shape = 2.0, theta_rate = 2.0;
  double kappa_shape = 4.0, kappa_rate = 2.0;
  double xi_shape = 2.0, xi_rate = 2.0;
  double sigma_shape = 10.0, sigma_scale = 2.0;  // sigma2 ~ InverseGamma

  void validate() const;
};

struct Tuning {
  double lambda_step = 0.015;  // Dirichlet concentration scale
  double phi_step = 0.05;      // logit-scale random-walk sd
  double ups_step = 0.054772255750516611;    // log-scale sd (variance 0.003)
  double theta_step = 0.070710678118654752;  // log-scale sd (variance 0.005)
  double kappa_step = 0.01;    // log-scale sd, adapted during burn-in
  double xi_step = 0.01;       // log-scale sd, adapted during burn-in
  // Residual-path proposals mix the gaussian-model conditional with draws
  // from the path prior. The prior component keeps the chain mobile in the
  // heavy tail, where the gaussian conditional over-shrinks and would make
  // excursions above the knot vanishingly rare.
  double delta_prior_frac = 0.5;
  bool adapt = true;           // Robbins-Monro on kappa/xi toward target_rate
  double target_rate = 0.4;
};

struct RunConfig {
  int64_t iterations = 0;
  int64_t burn_in = 0;
  int64_t thinning = 5;
  uint64_t seed = 1;
  int workers = 1;
  bool gaussian_body = false;   // bypass the heavy-tail marginal entirely
  bool prior_only = false;      // drop all likelihood terms (prior recovery)
  bool store_delta_draws = false;
  Priors priors;
  Tuning tuning;

  void validate() const;
};

struct ParamState {
  std::vector<double> mu, tau;            // size J+1 (index 0 = baseline)
  std::vector<std::vector<double>> beta;  // [J+1][S]
  std::vector<double> lambda;             // size L
  double phi = 0.9;
  double upsilon2 = 0.5, theta = 1.0, kappa = 2.0, xi = 1.0, sigma2 = 1.0;
  std::vector<std::vector<double>> delta;  // [S][T_s]
};

struct BlockStats {
  int64_t proposals = 0, accepts = 0;
  double rate() const { return proposals ? double(accepts) / double(proposals) : 0.0; }
};

// MH blocks in scan order (delta aggregated over nodes).
enum class Block : int { kDelta = 0, kLambda, kPhi, kUpsilon, kTheta, kKappa, kXi, kCount };
const char* block_name(Block b);

struct AcceptanceReport {
  std::array<BlockStats, size_t(Block::kCount)> burn_in;
  std::array<BlockStats, size_t(Block::kCount)> post;
};

struct ChainDraw {
  int64_t iteration = 0;
  std::vector<double> mu, tau, lambda;
  double phi = 0, upsilon2 = 0, theta = 0, kappa = 0, xi = 0, sigma2 = 0;
  std::vector<std::vector<double>> beta;  // [J+1][S]
};

struct PosteriorChain {
  int S = 0, J = 0, L = 0;
  uint64_t seed = 0;
  int64_t iterations = 0, burn_in = 0, thinning = 0;
  bool gaussian_body = false;
  Priors priors;
  Tuning tuning_initial, tuning_final;
  std::vector<ChainDraw> draws;
  std::vector<TimeGrid> grid;                     // observation grids (minutes)
  double t0 = 0.0;                                // epoch seconds at grid zero
  std::vector<std::vector<double>> delta_mean;    // posterior mean path per node
  std::vector<std::vector<std::vector<double>>> delta_draws;  // optional [draw][node][t]
  AcceptanceReport acceptance;

  size_t draw_count() const { return draws.size(); }
  std::vector<double> scalar_series(const std::string& name) const;
};

class Sampler {
 public:
  Sampler(const Topology& topo, Dataset data, RunConfig config);

  PosteriorChain run();

  // Granular interface used by the test suite.
  void sweep(int64_t iter);
  void update_beta(int64_t iter);
  void update_delta(int64_t iter);
  void update_mu(int64_t iter);
  void update_tau(int64_t iter);
  void update_lambda(int64_t iter);
  void update_phi(int64_t iter);
  void update_upsilon2(int64_t iter);
  void update_theta(int64_t iter);
  void update_kappa(int64_t iter);
  void update_xi(int64_t iter);
  void update_sigma2(int64_t iter);

  // Posterior-predictive refresh of the observations from the current state
  // (successive-conditional simulation in the sampler validation tests).
  void regenerate_y(int64_t iter);

  const ParamState& state() const { return st_; }
  void set_state(const ParamState& st);  // rebuilds every internal cache
  const Dataset& data() const { return data_; }
  const Topology& topology() const { return topo_; }
  const AcceptanceReport& acceptance() const { return accept_; }
  const Tuning& tuning() const { return tuning_; }
  const std::vector<int32_t>& spatial_permutation() const { return perm_; }

  // Initial state derived from the data (per-node least squares and prior
  // means); exposed for tests.
  static ParamState initial_state(const Topology& topo, const Dataset& data,
                                  const RunConfig& config);

 private:
  void rebuild_spatial_caches();
  void rebuild_temporal_caches();
  void refresh_residuals();
  // Candidate marginal evaluated on all nodes; returns sum of path log priors.
  double total_path_logprior(const TailMarginal& marg, bool gaussian,
                             const std::vector<OuFactor>* ou,
                             std::vector<std::vector<double>>* z,
                             std::vector<double>* lat, std::vector<double>* jac) const;
  void tally(Block b, int64_t iter, int64_t accepts, int64_t proposals);
  bool burning(int64_t iter) const { return iter < cfg_.burn_in; }
  void adapt_step(double& step, bool accepted, int64_t iter);

  const Topology& topo_;
  Dataset data_;
  RunConfig cfg_;
  Tuning tuning_;
  ParamState st_;
  int P_ = 0;  // J + 1

  // Spatial caches (lambda, phi).
  std::vector<int32_t> perm_;
  SparsePrecision qtilde_;          // unit-tau precision at current lambda/phi
  SparsePrecision q_scratch_;       // proposal buffer with the same pattern
  BandedChol qtilde_chol_;
  double qtilde_logdet_ = 0.0;
  std::vector<double> qtilde_rowsum_;
  double qtilde_one_sum_ = 0.0;

  // Temporal caches (theta, upsilon2, kappa, xi, delta).
  std::vector<OuFactor> ou_;
  std::vector<Tridiag> rinv_;
  std::vector<std::vector<double>> z_;
  std::vector<double> lat_ll_, jac_ll_;

  // Regression caches.
  std::vector<std::vector<double>> xtx_;    // per node, dense P x P row-major
  std::vector<std::vector<double>> resid_;  // y - X beta per node

  AcceptanceReport accept_;
};

PosteriorChain run_chain(const Topology& topo, const Dataset& data, const RunConfig& config);

}  // namespace nodetherm
