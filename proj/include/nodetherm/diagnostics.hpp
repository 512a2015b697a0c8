#pragma once

// Residual-assumption diagnostics computed from a fitted chain: posterior-mean
// residual extraction with latent standardization, marginal density and Q-Q
// overlays, time and space correlograms, and conditional tail-exceedance
// curves chi(c) with the bivariate-Gaussian reference and simultaneous
// simulation bands. Every operation is a pure function of (inputs, seed).

#include <cstdint>
#include <vector>

#include "nodetherm/meta_gp.hpp"
#include "nodetherm/sampler.hpp"
#include "nodetherm/topology.hpp"

namespace nodetherm {

struct FittedResiduals {
  std::vector<std::vector<double>> delta_hat;  // posterior-mean paths [S][T]
  std::vector<std::vector<double>> z_hat;      // latent scores of delta_hat
  double upsilon2 = 0.0, kappa = 0.0, xi = 0.0, theta = 0.0;  // posterior means used
  bool gaussian_body = false;
};

// Requires the chain's stored residual means; throws otherwise.
FittedResiduals fitted_residuals(const PosteriorChain& chain);

// Gaussian-kernel density of the pooled residuals (Silverman bandwidth) with
// the model marginal evaluated on the same grid.
struct DensityOverlay {
  std::vector<double> grid, kde, model;
  double bandwidth = 0.0;
  int64_t n = 0;
};
DensityOverlay density_overlay(const FittedResiduals& fr, int points = 201);

// Q-Q data: plotting positions p = (i - 0.5)/n, pooled sample quantiles, and
// the model quantile at p. max_points 0 keeps every observation.
struct QqData {
  std::vector<double> p, sample, model;
};
QqData qq_data(const FittedResiduals& fr, int64_t max_points = 2000);

// Within-node correlation of z_hat by time lag. Bin width is the pooled
// median observation spacing; bins sit on integer multiples of it. Bins
// without enough pairs or without variation carry NaN. theory = e^{-theta h}.
struct Correlogram {
  std::vector<double> lag, corr, theory;
  std::vector<int64_t> pairs;
  double bin_width = 0.0;
};
Correlogram time_correlogram(const FittedResiduals& fr, const std::vector<TimeGrid>& grid,
                             double max_lag_minutes);

// Same-time (within tolerance) correlation of z_hat across node pairs, binned
// by machine-room distance. Time tolerance defaults to half the pooled median
// spacing when <= 0.
struct Covariogram {
  std::vector<double> distance, corr;
  std::vector<int64_t> pairs;
  double bin_width = 0.0, time_tol_minutes = 0.0;
};
Covariogram spatial_covariogram(const FittedResiduals& fr, const std::vector<TimeGrid>& grid,
                                const Topology& topo, int bins, double max_distance_m,
                                double time_tol_minutes = 0.0);

// Conditional exceedance chi(c) = Pr(second > c | first > c) over ordered
// pairs of latent scores: successive observations within a node (kTime) or
// same-time nearest spatial neighbors (kSpace). theory is the
// bivariate-Gaussian curve at the pairs' correlation; the bands are a 95%
// simultaneous envelope from n_sim matched-size Gaussian simulations.
// Thresholds with an empty conditioning set carry NaN. pairs[i] counts the
// conditioning events at c[i].
enum class ChiMode { kTime, kSpace };
struct ChiCurve {
  std::vector<double> c, empirical, theory, band_lo, band_hi;
  std::vector<int64_t> pairs;
  double rho = 0.0;
  int64_t pair_count = 0;
  int n_sim = 0;
};
ChiCurve tail_dependence(const FittedResiduals& fr, const std::vector<TimeGrid>& grid,
                         const Topology& topo, ChiMode mode, const std::vector<double>& c_grid,
                         int n_sim, uint64_t seed, int workers = 1);

// Pr(Y > c | X > c) for standard bivariate normal with correlation rho.
double bivariate_gaussian_chi(double c, double rho);

}  // namespace nodetherm
